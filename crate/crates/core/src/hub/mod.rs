//! ANXHub: app marketplace with top-k discovery, user tokens for the UI
//! channel, and step assignments for SOP runs.

mod index;
mod routing;
mod tokens;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{terms, DiscoveryIndex, ScoredApp, TfIdfIndex};
pub use routing::{AssignmentEvent, AssignmentStatus, RoutingAssignment};
pub use tokens::{UserToken, DEFAULT_TTL_SECS};

use crate::clock::{Clock, SystemClock};
use crate::engine::{Channel, TokenCheck, TokenVerifier};
use crate::markup::AnxConfig;
use crate::store::{MemoryStore, Store, StoreError};
use routing::{RunEntry, Routing};
use tokens::{TokenRecord, TokenTable};

const APPS: &str = "hub_apps";
const TOKENS: &str = "hub_tokens";
const RUNS: &str = "hub_runs";
const EVENTS: &str = "hub_events";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HubError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("version {offered} is lower than indexed version {indexed}")]
    VersionRegression {
        indexed: semver::Version,
        offered: semver::Version,
    },
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("user tokens are issued only over the human UI channel")]
    ChannelViolation,
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{run}` has no step `{step}`")]
    UnknownStep { run: String, step: String },
    #[error("step `{step}` of run `{run}` is already assigned to `{agent}`")]
    AlreadyAssigned {
        run: String,
        step: String,
        agent: String,
    },
    #[error("step `{step}` is not assigned")]
    NotAssigned { step: String },
    #[error("step `{step}` is assigned to `{assignee}`, not `{agent}`")]
    NotAssignee {
        step: String,
        assignee: String,
        agent: String,
    },
    #[error("status {from:?} cannot move to {to:?}")]
    IllegalStatusRegression {
        from: AssignmentStatus,
        to: AssignmentStatus,
    },
    #[error("k must be at least 1")]
    BadK,
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Schema { .. } => "schema_error",
            Self::VersionRegression { .. } => "version_regression",
            Self::UnknownApp(_) => "unknown_app",
            Self::ChannelViolation => "channel_violation",
            Self::UnknownRun(_) => "unknown_run",
            Self::UnknownStep { .. } => "unknown_step",
            Self::AlreadyAssigned { .. } => "already_assigned",
            Self::NotAssigned { .. } => "not_assigned",
            Self::NotAssignee { .. } => "not_assignee",
            Self::IllegalStatusRegression { .. } => "illegal_status_regression",
            Self::BadK => "bad_k",
            Self::Store(_) => "store_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppManifest {
    pub app_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub config: AnxConfig,
    /// Set by the hub when published.
    #[serde(default)]
    pub published_at: Option<DateTime<Utc>>,
    pub version: semver::Version,
}

impl AppManifest {
    /// Manifest for `config`, taking title, description and version from it.
    pub fn for_config(app_id: impl Into<String>, config: AnxConfig, tags: Vec<String>) -> Self {
        Self {
            app_id: app_id.into(),
            title: config.title.clone(),
            description: config.description.clone().unwrap_or_default(),
            tags,
            version: config.version.clone(),
            config,
            published_at: None,
        }
    }

    fn search_text(&self) -> String {
        let mut s = format!("{} {}", self.title, self.description);
        for t in &self.tags {
            s.push(' ');
            s.push_str(t);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryEntry {
    pub app_id: String,
    pub title: String,
    /// Cosine similarity rounded to 4 decimals.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub entries: Vec<DiscoveryEntry>,
    pub k: usize,
}

fn valid_app_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

struct Catalog {
    index: Box<dyn DiscoveryIndex>,
    apps: BTreeMap<String, AppManifest>,
}

pub struct Hub {
    clock: Arc<dyn Clock>,
    store: Arc<dyn Store>,
    ttl_secs: i64,
    catalog: RwLock<Catalog>,
    tokens: Mutex<TokenTable>,
    routing: Mutex<Routing>,
}

impl Hub {
    pub fn new(clock: Arc<dyn Clock>, store: Arc<dyn Store>) -> Result<Self, HubError> {
        Self::with_index(clock, store, Box::new(TfIdfIndex::new()))
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(SystemClock), Arc::new(MemoryStore::new())).expect("empty memory store loads")
    }

    /// Rebuilds the catalog, token table and assignment log from `store`.
    pub fn with_index(clock: Arc<dyn Clock>, store: Arc<dyn Store>, mut index: Box<dyn DiscoveryIndex>) -> Result<Self, HubError> {
        let corrupt = |what: &str, e: serde_json::Error| StoreError(format!("{what}: {e}"));
        let mut apps = BTreeMap::new();
        for (id, bytes) in store.list(APPS)? {
            let m: AppManifest = serde_json::from_slice(&bytes).map_err(|e| corrupt("app", e))?;
            index.upsert(&id, &m.title, &m.search_text());
            apps.insert(id, m);
        }
        let mut tokens = TokenTable::default();
        for (t, bytes) in store.list(TOKENS)? {
            let r: TokenRecord = serde_json::from_slice(&bytes).map_err(|e| corrupt("token", e))?;
            tokens.by_token.insert(t, r);
        }
        let mut routing = Routing::default();
        for (id, bytes) in store.list(RUNS)? {
            let r: RunEntry = serde_json::from_slice(&bytes).map_err(|e| corrupt("run", e))?;
            routing.runs.insert(id, r);
        }
        let mut log: Vec<AssignmentEvent> = store
            .list(EVENTS)?
            .into_iter()
            .map(|(_, b)| serde_json::from_slice(&b).map_err(|e| corrupt("event", e)))
            .collect::<Result<_, _>>()?;
        log.sort_by_key(|e| e.seq);
        routing.log = log;
        Ok(Self {
            clock,
            store,
            ttl_secs: DEFAULT_TTL_SECS,
            catalog: RwLock::new(Catalog { index, apps }),
            tokens: Mutex::new(tokens),
            routing: Mutex::new(routing),
        })
    }

    pub fn with_ttl(mut self, secs: i64) -> Self {
        self.ttl_secs = secs;
        self
    }

    // ---- marketplace ----

    /// Indexes `manifest`; it is discoverable when this returns.
    pub fn publish(&self, mut manifest: AppManifest) -> Result<String, HubError> {
        if !valid_app_id(&manifest.app_id) {
            return Err(HubError::Schema {
                path: "app_id".into(),
                message: "expected 1-128 chars of [A-Za-z0-9_.-]".into(),
            });
        }
        if manifest.title.trim().is_empty() {
            return Err(HubError::Schema {
                path: "title".into(),
                message: "must not be empty".into(),
            });
        }
        let mut cat = self.catalog.write();
        if let Some(old) = cat.apps.get(&manifest.app_id) {
            if manifest.version < old.version {
                return Err(HubError::VersionRegression {
                    indexed: old.version.clone(),
                    offered: manifest.version,
                });
            }
        }
        manifest.published_at = Some(self.clock.now());
        let bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
        self.store.put(APPS, &manifest.app_id, &bytes)?;
        let text = manifest.search_text();
        cat.index.upsert(&manifest.app_id, &manifest.title, &text);
        let id = manifest.app_id.clone();
        cat.apps.insert(id.clone(), manifest);
        Ok(id)
    }

    /// Top-k apps for `query`: identities and scores only, never configs.
    pub fn discover(&self, query: &str, k: usize) -> Result<DiscoveryResult, HubError> {
        if k == 0 {
            return Err(HubError::BadK);
        }
        let cat = self.catalog.read();
        let entries = cat
            .index
            .top_k(query, k)
            .into_iter()
            .map(|s| DiscoveryEntry {
                app_id: s.app_id,
                title: s.title,
                score: (s.score * 10_000.0).round() / 10_000.0,
            })
            .collect();
        Ok(DiscoveryResult { entries, k })
    }

    /// Unrounded ranking, for callers that compare scores exactly.
    pub fn discover_exact(&self, query: &str, k: usize) -> Vec<ScoredApp> {
        self.catalog.read().index.top_k(query, k)
    }

    pub fn get_manifest(&self, app_id: &str) -> Result<AppManifest, HubError> {
        self.catalog
            .read()
            .apps
            .get(app_id)
            .cloned()
            .ok_or_else(|| HubError::UnknownApp(app_id.to_owned()))
    }

    pub fn app_count(&self) -> usize {
        self.catalog.read().apps.len()
    }

    // ---- tokens ----

    pub fn issue_user_token(&self, session_id: &str, channel: Channel) -> Result<UserToken, HubError> {
        if channel != Channel::HumanUi {
            return Err(HubError::ChannelViolation);
        }
        let mut t = self.tokens.lock();
        let tok = t.issue(session_id, self.clock.now(), self.ttl_secs);
        let rec = &t.by_token[&tok.token];
        self.store.put(TOKENS, &tok.token, &serde_json::to_vec(rec).expect("token serializes"))?;
        Ok(tok)
    }

    pub fn verify_user_token(&self, token: &str) -> TokenCheck {
        self.tokens.lock().verify(token, self.clock.now())
    }

    pub fn revoke_user_token(&self, token: &str) -> Result<bool, HubError> {
        let mut t = self.tokens.lock();
        match t.revoke(token) {
            Some(rec) => {
                self.store.put(TOKENS, token, &serde_json::to_vec(rec).expect("token serializes"))?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    // ---- routing ----

    /// Makes a run known so its steps can be assigned.
    pub fn register_run(&self, run_id: &str, steps: impl IntoIterator<Item = String>) -> Result<(), HubError> {
        let mut r = self.routing.lock();
        let entry = r.runs.entry(run_id.to_owned()).or_default();
        entry.steps.extend(steps);
        let bytes = serde_json::to_vec(&*entry).expect("run serializes");
        self.store.put(RUNS, run_id, &bytes)?;
        Ok(())
    }

    fn log_event(&self, r: &mut Routing, a: &RoutingAssignment) -> Result<(), HubError> {
        let ev = AssignmentEvent {
            seq: r.log.len() as u64 + 1,
            ts: self.clock.now(),
            sop_run_id: a.sop_run_id.clone(),
            step_uuid: a.step_uuid.clone(),
            agent_id: a.agent_id.clone(),
            status: a.status,
        };
        self.store.put(EVENTS, &format!("{:020}", ev.seq), &serde_json::to_vec(&ev).expect("event serializes"))?;
        let run = &r.runs[&a.sop_run_id];
        self.store.put(RUNS, &a.sop_run_id, &serde_json::to_vec(run).expect("run serializes"))?;
        r.log.push(ev);
        Ok(())
    }

    pub fn assign_step(&self, run_id: &str, step: &str, agent_id: &str) -> Result<RoutingAssignment, HubError> {
        let mut r = self.routing.lock();
        let run = r.runs.get_mut(run_id).ok_or_else(|| HubError::UnknownRun(run_id.to_owned()))?;
        if !run.steps.contains(step) {
            return Err(HubError::UnknownStep {
                run: run_id.to_owned(),
                step: step.to_owned(),
            });
        }
        if let Some(a) = run.assignments.get(step) {
            return Err(HubError::AlreadyAssigned {
                run: run_id.to_owned(),
                step: step.to_owned(),
                agent: a.agent_id.clone(),
            });
        }
        let a = RoutingAssignment {
            sop_run_id: run_id.to_owned(),
            step_uuid: step.to_owned(),
            agent_id: agent_id.to_owned(),
            status: AssignmentStatus::Assigned,
        };
        run.assignments.insert(step.to_owned(), a.clone());
        self.log_event(&mut r, &a)?;
        Ok(a)
    }

    /// Advances an assignment by exactly one status.
    pub fn report_step(
        &self,
        run_id: &str,
        step: &str,
        agent_id: &str,
        status: AssignmentStatus,
    ) -> Result<RoutingAssignment, HubError> {
        let mut r = self.routing.lock();
        let run = r.runs.get_mut(run_id).ok_or_else(|| HubError::UnknownRun(run_id.to_owned()))?;
        let a = run.assignments.get_mut(step).ok_or_else(|| HubError::NotAssigned { step: step.to_owned() })?;
        if a.agent_id != agent_id {
            return Err(HubError::NotAssignee {
                step: step.to_owned(),
                assignee: a.agent_id.clone(),
                agent: agent_id.to_owned(),
            });
        }
        if a.status.next() != Some(status) {
            return Err(HubError::IllegalStatusRegression { from: a.status, to: status });
        }
        a.status = status;
        let a = a.clone();
        self.log_event(&mut r, &a)?;
        Ok(a)
    }

    pub fn assignment(&self, run_id: &str, step: &str) -> Result<Option<RoutingAssignment>, HubError> {
        let r = self.routing.lock();
        let run = r.runs.get(run_id).ok_or_else(|| HubError::UnknownRun(run_id.to_owned()))?;
        Ok(run.assignments.get(step).cloned())
    }

    /// Assignment events of `run_id` with `seq > after`, in log order.
    pub fn events(&self, run_id: &str, after: u64) -> Result<Vec<AssignmentEvent>, HubError> {
        let r = self.routing.lock();
        if !r.runs.contains_key(run_id) {
            return Err(HubError::UnknownRun(run_id.to_owned()));
        }
        Ok(r.log
            .iter()
            .filter(|e| e.seq > after && e.sop_run_id == run_id)
            .cloned()
            .collect())
    }

    pub fn run_steps(&self, run_id: &str) -> Result<BTreeSet<String>, HubError> {
        let r = self.routing.lock();
        r.runs
            .get(run_id)
            .map(|e| e.steps.clone())
            .ok_or_else(|| HubError::UnknownRun(run_id.to_owned()))
    }
}

impl TokenVerifier for Hub {
    fn verify(&self, token: &str) -> Result<TokenCheck, String> {
        Ok(self.verify_user_token(token))
    }
}
