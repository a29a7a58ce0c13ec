//! A single SOP run: step statuses, selected routes, open gates and trace.
//!
//! This type holds no I/O. Node records go through a [`NodeStore`], and the
//! channel rules for human gates are enforced by the caller before
//! [`SopRun::resolve_gate`] is reached.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::def::{StepDef, StepKind};
use super::graph::SopDef;
use super::provider::{DecisionProvider, NodeRecord, NodeSnapshot, ProviderError};
use super::ready::{ready_steps, unreachable_steps, RouteMap, StatusMap, StepStatus};
use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SopError {
    #[error("unknown step `{0}`")]
    UnknownStep(String),
    #[error("step `{step}` is {status}, expected {expected}")]
    WrongStatus {
        step: String,
        status: &'static str,
        expected: &'static str,
    },
    #[error("step `{step}` is a {kind} step")]
    WrongKind { step: String, kind: &'static str },
    #[error("provider chose arm {index} of step `{step}` which has {arms} arms")]
    ProviderOutOfBounds {
        step: String,
        index: usize,
        arms: usize,
    },
    #[error("provider chose targets {chosen:?} outside the candidates of step `{step}`")]
    InvalidTargets { step: String, chosen: Vec<String> },
    #[error("decision `{decision}` matches no arm of step `{step}`")]
    UnknownDecision { step: String, decision: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("node store: {0}")]
    Node(String),
}

/// Where a run's node records live.
pub trait NodeStore {
    fn write_node(&mut self, node_id: &str, payload: Value) -> Result<u64, String>;
    fn snapshot(&self) -> Result<NodeSnapshot, String>;
}

/// In-memory node records, used when a run is driven without a Core card.
#[derive(Debug, Clone, Default)]
pub struct MemoryNodes {
    records: Vec<NodeRecord>,
}

impl NodeStore for MemoryNodes {
    fn write_node(&mut self, node_id: &str, payload: Value) -> Result<u64, String> {
        let version = match self.records.iter().position(|r| r.node_id == node_id) {
            Some(i) => {
                let mut r = self.records.remove(i);
                r.version += 1;
                r.payload = payload;
                let v = r.version;
                self.records.push(r);
                v
            }
            None => {
                self.records.push(NodeRecord {
                    node_id: node_id.to_owned(),
                    version: 1,
                    payload,
                });
                1
            }
        };
        Ok(version)
    }

    fn snapshot(&self) -> Result<NodeSnapshot, String> {
        Ok(NodeSnapshot {
            records: self.records.clone(),
        })
    }
}

/// Who caused a transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub id: String,
    /// `agent`, `human_ui` or `system`.
    pub channel: String,
}

impl Actor {
    pub fn agent(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            channel: "agent".into(),
        }
    }

    pub fn human(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            channel: "human_ui".into(),
        }
    }

    pub fn system() -> Self {
        Self {
            id: "sop-engine".into(),
            channel: "system".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub run_id: String,
    pub step: Option<String>,
    pub event: String,
    pub actor: String,
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl TraceEvent {
    /// The event without its timestamp, for comparing runs.
    pub fn untimed(&self) -> Value {
        json!({
            "seq": self.seq,
            "run_id": self.run_id,
            "step": self.step,
            "event": self.event,
            "actor": self.actor,
            "channel": self.channel,
            "detail": self.detail,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Some step is ready or running.
    Active,
    /// Nothing can move until a human resolves a gate.
    WaitingHuman,
    /// Every step is completed or skipped.
    Completed,
    /// A step failed and nothing else can move.
    Failed,
}

/// Serializable form of a run, for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: StatusMap,
    pub routes: RouteMap,
    pub gates: BTreeMap<String, String>,
    pub trace: Vec<TraceEvent>,
}

pub struct SopRun {
    run_id: String,
    def: Arc<SopDef>,
    status: StatusMap,
    routes: RouteMap,
    /// Step uuid -> gate id on the backing card.
    gates: BTreeMap<String, String>,
    trace: Vec<TraceEvent>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for SopRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SopRun")
            .field("run_id", &self.run_id)
            .field("status", &self.status)
            .field("routes", &self.routes)
            .field("gates", &self.gates)
            .finish_non_exhaustive()
    }
}

impl SopRun {
    pub fn new(run_id: impl Into<String>, def: Arc<SopDef>, clock: Arc<dyn Clock>) -> Self {
        let status = def
            .uuids()
            .map(|u| (u.to_owned(), StepStatus::Pending))
            .collect();
        let mut run = Self {
            run_id: run_id.into(),
            def,
            status,
            routes: RouteMap::new(),
            gates: BTreeMap::new(),
            trace: Vec::new(),
            clock,
        };
        let title = run.def.title.clone();
        run.push(None, "run_started", &Actor::system(), Some(json!({ "title": title })));
        run.settle();
        run
    }

    pub fn from_record(record: RunRecord, def: Arc<SopDef>, clock: Arc<dyn Clock>) -> Self {
        Self {
            run_id: record.run_id,
            def,
            status: record.status,
            routes: record.routes,
            gates: record.gates,
            trace: record.trace,
            clock,
        }
    }

    pub fn to_record(&self) -> RunRecord {
        RunRecord {
            run_id: self.run_id.clone(),
            status: self.status.clone(),
            routes: self.routes.clone(),
            gates: self.gates.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn def(&self) -> &SopDef {
        &self.def
    }

    pub fn status_of(&self, uuid: &str) -> Option<StepStatus> {
        self.status.get(uuid).copied()
    }

    pub fn statuses(&self) -> &StatusMap {
        &self.status
    }

    pub fn routes(&self) -> &RouteMap {
        &self.routes
    }

    pub fn gates(&self) -> &BTreeMap<String, String> {
        &self.gates
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Steps currently in `ready`.
    pub fn ready(&self) -> BTreeSet<String> {
        self.with_status(StepStatus::Ready)
    }

    pub fn with_status(&self, s: StepStatus) -> BTreeSet<String> {
        self.status
            .iter()
            .filter(|(_, &v)| v == s)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn run_status(&self) -> RunStatus {
        let count = |s| self.status.values().filter(|&&v| v == s).count();
        if self.status.values().all(|s| s.is_terminal()) {
            RunStatus::Completed
        } else if count(StepStatus::Ready) + count(StepStatus::Running) > 0 {
            RunStatus::Active
        } else if count(StepStatus::BlockedOnHuman) > 0 {
            RunStatus::WaitingHuman
        } else {
            RunStatus::Failed
        }
    }

    fn step(&self, uuid: &str) -> Result<StepDef, SopError> {
        self.def
            .step(uuid)
            .cloned()
            .ok_or_else(|| SopError::UnknownStep(uuid.to_owned()))
    }

    fn require(&self, uuid: &str, allowed: &[StepStatus], expected: &'static str) -> Result<(), SopError> {
        let st = self
            .status_of(uuid)
            .ok_or_else(|| SopError::UnknownStep(uuid.to_owned()))?;
        if allowed.contains(&st) {
            Ok(())
        } else {
            Err(SopError::WrongStatus {
                step: uuid.to_owned(),
                status: st.as_str(),
                expected,
            })
        }
    }

    fn push(&mut self, step: Option<&str>, event: &str, actor: &Actor, detail: Option<Value>) {
        self.trace.push(TraceEvent {
            seq: self.trace.len() as u64 + 1,
            ts: self.clock.now(),
            run_id: self.run_id.clone(),
            step: step.map(str::to_owned),
            event: event.to_owned(),
            actor: actor.id.clone(),
            channel: actor.channel.clone(),
            detail,
        });
    }

    fn set(&mut self, uuid: &str, s: StepStatus) {
        self.status.insert(uuid.to_owned(), s);
    }

    /// Marks unreachable steps skipped and newly schedulable ones ready.
    fn settle(&mut self) {
        loop {
            let skipped = unreachable_steps(&self.def, &self.status, &self.routes);
            let ready = ready_steps(&self.def, &self.status, &self.routes);
            if skipped.is_empty() && ready.is_empty() {
                break;
            }
            for u in &skipped {
                self.set(u, StepStatus::Skipped);
                self.push(Some(u), "skipped", &Actor::system(), None);
            }
            for u in &ready {
                self.set(u, StepStatus::Ready);
                self.push(Some(u), "ready", &Actor::system(), None);
            }
        }
        let terminal = self.status.values().all(|s| s.is_terminal());
        if terminal && self.trace.last().map(|e| e.event.as_str()) != Some("run_completed") {
            self.push(None, "run_completed", &Actor::system(), None);
        }
    }

    /// `ready` → `running`.
    pub fn start_step(&mut self, uuid: &str, actor: &Actor) -> Result<(), SopError> {
        self.step(uuid)?;
        self.require(uuid, &[StepStatus::Ready], "ready")?;
        self.set(uuid, StepStatus::Running);
        self.push(Some(uuid), "started", actor, None);
        Ok(())
    }

    /// Writes `outputs`, resolves routing through `provider` and completes the
    /// step. Condition steps that become ready as a result are evaluated with
    /// the same provider.
    pub fn complete_step(
        &mut self,
        uuid: &str,
        outputs: Map<String, Value>,
        provider: &dyn DecisionProvider,
        actor: &Actor,
        nodes: &mut dyn NodeStore,
    ) -> Result<(), SopError> {
        self.complete_step_single(uuid, outputs, provider, actor, nodes)?;
        self.cascade_conditions(&|_| Some(provider), nodes);
        Ok(())
    }

    /// Like [`Self::complete_step`] without evaluating follow-up conditions.
    pub fn complete_step_single(
        &mut self,
        uuid: &str,
        outputs: Map<String, Value>,
        provider: &dyn DecisionProvider,
        actor: &Actor,
        nodes: &mut dyn NodeStore,
    ) -> Result<(), SopError> {
        let step = self.step(uuid)?;
        if step.kind == StepKind::HumanGate {
            return Err(SopError::WrongKind {
                step: uuid.to_owned(),
                kind: step.kind.as_str(),
            });
        }
        self.require(uuid, &[StepStatus::Ready, StepStatus::Running], "ready or running")?;
        if self.status_of(uuid) == Some(StepStatus::Ready) {
            self.start_step(uuid, actor)?;
        }

        let route = match self.write_and_route(&step, outputs, provider, nodes) {
            Ok(r) => r,
            Err(e) => {
                self.set(uuid, StepStatus::Failed);
                self.push(Some(uuid), "failed", actor, Some(json!({ "reason": e.to_string() })));
                return Err(e);
            }
        };
        if let Some((arm, targets)) = route {
            self.push(
                Some(uuid),
                "routed",
                actor,
                Some(json!({ "arm": arm, "targets": targets })),
            );
            self.routes.insert(uuid.to_owned(), targets);
        }
        self.set(uuid, StepStatus::Completed);
        self.push(Some(uuid), "completed", actor, None);
        self.settle();
        Ok(())
    }

    fn write_and_route(
        &self,
        step: &StepDef,
        outputs: Map<String, Value>,
        provider: &dyn DecisionProvider,
        nodes: &mut dyn NodeStore,
    ) -> Result<Option<(Option<usize>, Vec<String>)>, SopError> {
        if !outputs.is_empty() {
            nodes
                .write_node(&step.uuid, Value::Object(outputs))
                .map_err(SopError::Node)?;
        }
        if !step.is_router() {
            return Ok(None);
        }
        let snap = nodes.snapshot().map_err(SopError::Node)?;
        if !step.case.is_empty() {
            let i = provider.choose_arm(step, &snap)?;
            let arm = step.case.get(i).ok_or(SopError::ProviderOutOfBounds {
                step: step.uuid.clone(),
                index: i,
                arms: step.case.len(),
            })?;
            return Ok(Some((Some(i), arm.targets.clone())));
        }
        let candidates = step.targets.clone().unwrap_or_default();
        let chosen = provider.choose_targets(step, &snap)?;
        if chosen.is_empty() || chosen.iter().any(|c| !candidates.contains(c)) {
            return Err(SopError::InvalidTargets {
                step: step.uuid.clone(),
                chosen,
            });
        }
        Ok(Some((None, chosen)))
    }

    /// Evaluates ready condition steps until none is left. Steps without a
    /// provider are left ready; provider failures fail the step.
    pub(crate) fn cascade_conditions<'p>(
        &mut self,
        provider_for: &dyn Fn(&StepDef) -> Option<&'p dyn DecisionProvider>,
        nodes: &mut dyn NodeStore,
    ) {
        loop {
            let next = self.ready().into_iter().find_map(|u| {
                let s = self.def.step(&u)?;
                (s.kind == StepKind::Condition)
                    .then(|| provider_for(s).map(|p| (s.clone(), p)))
                    .flatten()
            });
            let Some((step, provider)) = next else { break };
            let actor = Actor::agent(step.agent_id());
            let outputs = match provider.step_outputs(&step, &nodes.snapshot().unwrap_or_default()) {
                Ok(o) => o,
                Err(e) => {
                    self.fail(&step.uuid, &actor, &e.to_string());
                    continue;
                }
            };
            // Errors are recorded on the step by `complete_one`.
            let _ = self.complete_step_single(&step.uuid, outputs, provider, &actor, nodes);
        }
    }

    pub(crate) fn fail(&mut self, uuid: &str, actor: &Actor, reason: &str) {
        self.set(uuid, StepStatus::Failed);
        self.push(Some(uuid), "failed", actor, Some(json!({ "reason": reason })));
    }

    /// Blocks a ready human-gate step on `gate_id`, after optionally
    /// recording the assigned agent's analysis.
    pub fn open_gate(
        &mut self,
        uuid: &str,
        gate_id: &str,
        analysis: Map<String, Value>,
        actor: &Actor,
        nodes: &mut dyn NodeStore,
    ) -> Result<(), SopError> {
        let step = self.step(uuid)?;
        if step.kind != StepKind::HumanGate {
            return Err(SopError::WrongKind {
                step: uuid.to_owned(),
                kind: step.kind.as_str(),
            });
        }
        self.require(uuid, &[StepStatus::Ready, StepStatus::Running], "ready or running")?;
        if !analysis.is_empty() {
            nodes
                .write_node(uuid, Value::Object(analysis))
                .map_err(SopError::Node)?;
        }
        self.set(uuid, StepStatus::BlockedOnHuman);
        self.gates.insert(uuid.to_owned(), gate_id.to_owned());
        self.push(Some(uuid), "gate_opened", actor, Some(json!({ "gate_id": gate_id })));
        Ok(())
    }

    /// Index of the arm of `uuid` whose `when` text equals `decision`
    /// (trimmed, case-insensitive).
    pub fn decision_arm(&self, uuid: &str, decision: &str) -> Result<usize, SopError> {
        let step = self.step(uuid)?;
        let d = decision.trim();
        step.case
            .iter()
            .position(|a| a.when.trim().eq_ignore_ascii_case(d))
            .ok_or_else(|| SopError::UnknownDecision {
                step: uuid.to_owned(),
                decision: decision.to_owned(),
            })
    }

    /// Completes a blocked human gate with a human decision. The caller has
    /// already checked the channel and the user token.
    pub fn resolve_gate(
        &mut self,
        uuid: &str,
        decision: &str,
        actor: &Actor,
        nodes: &mut dyn NodeStore,
    ) -> Result<(), SopError> {
        self.require(uuid, &[StepStatus::BlockedOnHuman], "blocked_on_human")?;
        let arm = self.decision_arm(uuid, decision)?;
        let targets = self.def.step(uuid).map(|s| s.case[arm].targets.clone()).unwrap_or_default();
        nodes
            .write_node(&format!("{uuid}.decision"), json!({ "decision": decision.trim(), "arm": arm }))
            .map_err(SopError::Node)?;
        self.gates.remove(uuid);
        self.push(
            Some(uuid),
            "gate_resolved",
            actor,
            Some(json!({ "decision": decision.trim() })),
        );
        self.push(Some(uuid), "routed", actor, Some(json!({ "arm": arm, "targets": targets })));
        self.routes.insert(uuid.to_owned(), targets);
        self.set(uuid, StepStatus::Completed);
        self.push(Some(uuid), "completed", actor, None);
        self.settle();
        Ok(())
    }

    /// Records a step failure reported by its executor.
    pub fn fail_step(&mut self, uuid: &str, reason: &str, actor: &Actor) -> Result<(), SopError> {
        self.require(uuid, &[StepStatus::Ready, StepStatus::Running], "ready or running")?;
        self.fail(uuid, actor, reason);
        Ok(())
    }
}

/// One JSON object per line with `ts, run_id, step, event, actor, channel`.
pub fn trace_ndjson(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in trace {
        let line = json!({
            "ts": e.ts.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "run_id": e.run_id,
            "step": e.step,
            "event": e.event,
            "actor": e.actor,
            "channel": e.channel,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}
