//! Decision providers: the pluggable stand-in for whoever picks branches
//! and produces step outputs.

use std::collections::BTreeMap;

use serde_json::{Map, Value};
use thiserror::Error;

use super::def::StepDef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("no arm of step `{step}` matches the current node records")]
    NoArmMatched { step: String },
    #[error("provider failed on step `{step}`: {reason}")]
    Failed { step: String, reason: String },
}

/// One node record as seen by a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_id: String,
    pub version: u64,
    pub payload: Value,
}

/// Read-only view of a run's node records, oldest write first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeSnapshot {
    pub records: Vec<NodeRecord>,
}

impl NodeSnapshot {
    pub fn node(&self, node_id: &str) -> Option<&Value> {
        self.records
            .iter()
            .find(|r| r.node_id == node_id)
            .map(|r| &r.payload)
    }

    /// Looks `field` up across object payloads; the most recently written
    /// record holding it wins.
    pub fn field(&self, field: &str) -> Option<&Value> {
        self.records
            .iter()
            .rev()
            .find_map(|r| r.payload.as_object().and_then(|o| o.get(field)))
    }
}

pub trait DecisionProvider: Send + Sync {
    /// Index of the chosen arm of `step.case`.
    fn choose_arm(&self, step: &StepDef, nodes: &NodeSnapshot) -> Result<usize, ProviderError>;

    /// Outputs the provider produces when it executes `step`.
    fn step_outputs(&self, _step: &StepDef, _nodes: &NodeSnapshot) -> Result<Map<String, Value>, ProviderError> {
        Ok(Map::new())
    }

    /// Targets chosen out of a step with a plain `targets` list. All by default.
    fn choose_targets(&self, step: &StepDef, _nodes: &NodeSnapshot) -> Result<Vec<String>, ProviderError> {
        Ok(step.targets.clone().unwrap_or_default())
    }
}

/// Deterministic provider that evaluates `when` texts of the form
/// `<field> <op> <number>` joined by commas, with `op` one of
/// `>= > <= < ==`.
///
/// A comma-separated clause that does not follow that shape is ignored; an
/// arm matches when it has at least one numeric clause and all of them hold.
/// The first matching arm wins. Fixed outputs can be attached per step.
#[derive(Debug, Clone, Default)]
pub struct ReferenceProvider {
    outputs: BTreeMap<String, Map<String, Value>>,
}

impl ReferenceProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Outputs produced when executing step `uuid`.
    pub fn with_outputs(mut self, uuid: impl Into<String>, outputs: Value) -> Self {
        if let Value::Object(m) = outputs {
            self.outputs.insert(uuid.into(), m);
        }
        self
    }
}

impl DecisionProvider for ReferenceProvider {
    fn choose_arm(&self, step: &StepDef, nodes: &NodeSnapshot) -> Result<usize, ProviderError> {
        step.case
            .iter()
            .position(|arm| arm_matches(&arm.when, nodes))
            .ok_or_else(|| ProviderError::NoArmMatched {
                step: step.uuid.clone(),
            })
    }

    fn step_outputs(&self, step: &StepDef, _nodes: &NodeSnapshot) -> Result<Map<String, Value>, ProviderError> {
        Ok(self.outputs.get(&step.uuid).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
struct Clause<'a> {
    field: &'a str,
    op: Cmp,
    rhs: f64,
}

fn parse_clause(text: &str) -> Option<Clause<'_>> {
    let text = text.trim();
    let field_end = text
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(text.len());
    let field = &text[..field_end];
    if field.is_empty() || field.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let rest = text[field_end..].trim_start();
    let (op, rest) = [(">=", Cmp::Ge), ("<=", Cmp::Le), ("==", Cmp::Eq), (">", Cmp::Gt), ("<", Cmp::Lt)]
        .into_iter()
        .find_map(|(sym, op)| rest.strip_prefix(sym).map(|r| (op, r)))?;
    let rhs: f64 = rest.trim().parse().ok()?;
    Some(Clause { field, op, rhs })
}

fn arm_matches(when: &str, nodes: &NodeSnapshot) -> bool {
    let clauses: Vec<Clause> = when.split(',').filter_map(parse_clause).collect();
    !clauses.is_empty()
        && clauses.iter().all(|c| {
            let Some(lhs) = nodes.field(c.field).and_then(Value::as_f64) else {
                return false;
            };
            match c.op {
                Cmp::Ge => lhs >= c.rhs,
                Cmp::Gt => lhs > c.rhs,
                Cmp::Le => lhs <= c.rhs,
                Cmp::Lt => lhs < c.rhs,
                Cmp::Eq => lhs == c.rhs,
            }
        })
}
