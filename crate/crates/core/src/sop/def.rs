//! Step definitions as they appear inside a `kind: sop` config.

use serde_json::{Map, Value};

use crate::keys::is_identifier;
use crate::markup::{items_to_json, parse_items, ConfigError, Fields, ItemDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Form,
    Condition,
    Action,
    HumanGate,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Form => "form",
            Self::Condition => "condition",
            Self::Action => "action",
            Self::HumanGate => "human_gate",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "form" => Self::Form,
            "condition" => Self::Condition,
            "action" => Self::Action,
            "human_gate" => Self::HumanGate,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinRule {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseArm {
    pub when: String,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDef {
    pub uuid: String,
    pub nick: Option<String>,
    /// Defaults to `action` when the config omits it.
    pub kind: StepKind,
    pub start: bool,
    pub sources: Vec<String>,
    pub sources_join: JoinRule,
    /// Decision arms: conditions choose one, human gates map a decision to one.
    pub case: Vec<CaseArm>,
    /// Candidate targets for dynamic routing out of a non-condition step.
    pub targets: Option<Vec<String>>,
    /// Agent id the step is dispatched to.
    pub agent: Option<String>,
    pub description: Option<String>,
    pub items: Vec<ItemDef>,
    pub extensions: Map<String, Value>,
}

impl StepDef {
    pub fn new(uuid: impl Into<String>, kind: StepKind) -> Self {
        Self {
            uuid: uuid.into(),
            nick: None,
            kind,
            start: false,
            sources: Vec::new(),
            sources_join: JoinRule::All,
            case: Vec::new(),
            targets: None,
            agent: None,
            description: None,
            items: Vec::new(),
            extensions: Map::new(),
        }
    }

    /// True when this step chooses among successors at run time.
    pub fn is_router(&self) -> bool {
        !self.case.is_empty() || self.targets.is_some()
    }

    /// Every step this one may route to, in declaration order, deduplicated.
    pub fn route_targets(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let all = self
            .case
            .iter()
            .flat_map(|a| a.targets.iter())
            .chain(self.targets.iter().flatten());
        for t in all {
            if !out.contains(&t.as_str()) {
                out.push(t);
            }
        }
        out
    }

    pub fn agent_id(&self) -> &str {
        self.agent.as_deref().unwrap_or("default")
    }

    pub fn label(&self) -> &str {
        self.nick.as_deref().unwrap_or(&self.uuid)
    }

    pub(crate) fn from_json(v: &Value, path: &str) -> Result<Self, ConfigError> {
        let mut f = Fields::new(v, path)?;
        let uuid = f.req_str("uuid")?;
        if !is_identifier(&uuid) {
            return Err(ConfigError::schema(f.path("uuid"), "not an identifier"));
        }
        let nick = f.opt_str("nick")?;
        let kind = match f.opt_str("kind")? {
            None => StepKind::Action,
            Some(k) => StepKind::parse(&k).ok_or_else(|| {
                ConfigError::schema(f.path("kind"), format!("unknown step kind `{k}`"))
            })?,
        };
        let start = f.opt_bool("start")?.unwrap_or(false);
        let sources = f.opt_str_list("sources")?.unwrap_or_default();
        let sources_join = match f.opt_str("sources_join")?.as_deref() {
            None | Some("all") => JoinRule::All,
            Some("any") => JoinRule::Any,
            Some(other) => {
                return Err(ConfigError::schema(
                    f.path("sources_join"),
                    format!("expected `all` or `any`, got `{other}`"),
                ))
            }
        };
        let case = match f.take("case") {
            None => Vec::new(),
            Some(c) => parse_case(&c, &f.path("case"))?,
        };
        let targets = f.opt_str_list("targets")?;
        let agent = f.opt_str("agent")?;
        let description = f.opt_str("description")?;
        let items = match f.take("items") {
            None => Vec::new(),
            Some(i) => parse_items(&i, &f.path("items"))?,
        };

        match kind {
            StepKind::Condition if case.is_empty() => {
                return Err(ConfigError::schema(f.path("case"), "condition steps need at least one arm"))
            }
            StepKind::Form | StepKind::Action if !case.is_empty() => {
                return Err(ConfigError::schema(
                    f.path("case"),
                    "only condition and human_gate steps have arms",
                ))
            }
            _ => {}
        }
        if !case.is_empty() && targets.is_some() {
            return Err(ConfigError::schema(f.path("targets"), "not allowed together with case"));
        }
        if matches!(&targets, Some(t) if t.is_empty()) {
            return Err(ConfigError::schema(f.path("targets"), "must not be empty"));
        }

        Ok(Self {
            uuid,
            nick,
            kind,
            start,
            sources,
            sources_join,
            case,
            targets,
            agent,
            description,
            items,
            extensions: f.rest(),
        })
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("uuid".into(), Value::from(self.uuid.clone()));
        if self.start {
            m.insert("start".into(), Value::Bool(true));
        }
        if let Some(n) = &self.nick {
            m.insert("nick".into(), Value::from(n.clone()));
        }
        m.insert("kind".into(), Value::from(self.kind.as_str()));
        if !self.sources.is_empty() {
            m.insert("sources".into(), Value::from(self.sources.clone()));
        }
        if self.sources_join == JoinRule::Any {
            m.insert("sources_join".into(), Value::from("any"));
        }
        if !self.case.is_empty() {
            let arms = self
                .case
                .iter()
                .map(|a| serde_json::json!({"when": a.when, "targets": a.targets}))
                .collect();
            m.insert("case".into(), Value::Array(arms));
        }
        if let Some(t) = &self.targets {
            m.insert("targets".into(), Value::from(t.clone()));
        }
        if let Some(a) = &self.agent {
            m.insert("agent".into(), Value::from(a.clone()));
        }
        if let Some(d) = &self.description {
            m.insert("description".into(), Value::from(d.clone()));
        }
        if !self.items.is_empty() {
            m.insert("items".into(), items_to_json(&self.items));
        }
        for (k, v) in &self.extensions {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }
}

fn parse_case(v: &Value, path: &str) -> Result<Vec<CaseArm>, ConfigError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ConfigError::schema(path, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, arm)| {
            let mut f = Fields::new(arm, &format!("{path}[{i}]"))?;
            let when = f.req_str("when")?;
            let targets = f.opt_str_list("targets")?.unwrap_or_default();
            if targets.is_empty() {
                return Err(ConfigError::schema(f.path("targets"), "each arm needs at least one target"));
            }
            Ok(CaseArm { when, targets })
        })
        .collect()
}
