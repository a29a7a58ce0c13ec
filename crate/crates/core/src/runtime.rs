//! SOP runs backed by Core cards and Hub assignments.
//!
//! Every run gets a card on the [`Engine`]: node records are written to it,
//! its lifecycle follows the run, and human gates are confirmation gates on
//! it so the channel rules live in one place. The [`Hub`] records which agent
//! holds which step.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::cli::CliCommand;
use crate::clock::Clock;
use crate::engine::{ChannelIdentity, Engine, EngineConfig, EngineError, ExecResult, ExecStatus, LifecycleState};
use crate::hub::{AssignmentStatus, Hub, HubError};
use crate::keys::random_token;
use crate::markup::AnxConfig;
use crate::sop::{
    load_sop, run_to_quiescence, Actor, DecisionProvider, DriveError, NodeSnapshot, NodeStore, Providers, RunHooks,
    RunRecord, RunStatus, SopDef, SopError, SopLoadError, SopRun, StepDef, StepStatus, TraceEvent,
};
use crate::store::{MemoryStore, Store, StoreError};

const RUNS: &str = "sop_runs";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("card `{0}` does not back a SOP run")]
    NotARun(String),
    #[error("step `{0}` has no open gate")]
    NoOpenGate(String),
    #[error(transparent)]
    Load(#[from] SopLoadError),
    #[error(transparent)]
    Sop(#[from] SopError),
    #[error(transparent)]
    Drive(#[from] DriveError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RuntimeError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownRun(_) => "unknown_run",
            Self::NotARun(_) => "not_a_run",
            Self::NoOpenGate(_) => "no_open_gate",
            Self::Load(_) => "invalid_sop",
            Self::Sop(SopError::UnknownStep(_)) => "unknown_step",
            Self::Sop(SopError::UnknownDecision { .. }) => "unknown_decision",
            Self::Sop(SopError::WrongStatus { .. } | SopError::WrongKind { .. }) => "wrong_state",
            Self::Sop(_) => "sop_error",
            Self::Drive(DriveError::ProviderMissing(_)) => "provider_missing",
            Self::Drive(_) => "sop_error",
            Self::Engine(e) => e.code(),
            Self::Hub(e) => e.code(),
            Self::Store(_) => "store_error",
        }
    }
}

/// Public view of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub card_key: String,
    pub title: String,
    pub status: RunStatus,
    pub steps: BTreeMap<String, StepStatus>,
    pub routes: BTreeMap<String, Vec<String>>,
    /// Step uuid -> gate id, for steps blocked on a human.
    pub gates: BTreeMap<String, String>,
    pub lifecycle: LifecycleState,
}

#[derive(Serialize, Deserialize)]
struct StoredRun {
    card_key: String,
    config: AnxConfig,
    record: RunRecord,
}

struct Slot {
    card: String,
    config: AnxConfig,
    run: SopRun,
}

/// Node records of a run, kept on its card.
struct CardNodes<'a> {
    engine: &'a Engine,
    card: &'a str,
    channel: &'static str,
}

impl NodeStore for CardNodes<'_> {
    fn write_node(&mut self, node_id: &str, payload: Value) -> Result<u64, String> {
        self.engine
            .write_node_as(self.card, node_id, payload, self.channel)
            .map_err(|e| e.to_string())
    }

    fn snapshot(&self) -> Result<NodeSnapshot, String> {
        self.engine.node_snapshot(self.card).map_err(|e| e.to_string())
    }
}

struct CardHooks<'a> {
    engine: &'a Engine,
    hub: &'a Hub,
    card: &'a str,
}

impl CardHooks<'_> {
    fn progress(&self, step: &StepDef, agent: &str, event: &str) -> Result<(), String> {
        self.engine
            .step_progress(self.card, "agent", json!({ "step": step.uuid, "agent": agent, "event": event }))
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

impl RunHooks for CardHooks<'_> {
    fn assigned(&mut self, run_id: &str, step: &StepDef, agent: &str) -> Result<(), String> {
        match self.hub.assign_step(run_id, &step.uuid, agent) {
            Ok(_) => {}
            // A resumed run may find its own earlier assignment.
            Err(HubError::AlreadyAssigned { agent: a, .. }) if a == agent => {}
            Err(e) => return Err(e.to_string()),
        }
        let current = self.hub.assignment(run_id, &step.uuid).map_err(|e| e.to_string())?;
        if current.map(|a| a.status) == Some(AssignmentStatus::Assigned) {
            self.hub
                .report_step(run_id, &step.uuid, agent, AssignmentStatus::Accepted)
                .map_err(|e| e.to_string())?;
        }
        self.progress(step, agent, "assigned")
    }

    fn finished(&mut self, run_id: &str, step: &StepDef, agent: &str) -> Result<(), String> {
        let current = self.hub.assignment(run_id, &step.uuid).map_err(|e| e.to_string())?;
        if current.map(|a| a.status) == Some(AssignmentStatus::Accepted) {
            self.hub
                .report_step(run_id, &step.uuid, agent, AssignmentStatus::Done)
                .map_err(|e| e.to_string())?;
        }
        if self.engine.lifecycle(self.card).map_err(|e| e.to_string())? == LifecycleState::Confirming {
            return Ok(());
        }
        self.progress(step, agent, "finished")
    }

    fn open_gate(&mut self, run_id: &str, step: &StepDef) -> Result<String, String> {
        let description = step.description.clone().unwrap_or_else(|| step.label().to_owned());
        self.engine
            .open_step_gate(self.card, run_id, &step.uuid, &description)
            .map_err(|e| e.to_string())
    }
}

/// Runs SOPs against one engine and one hub.
pub struct Runtime {
    engine: Arc<Engine>,
    hub: Arc<Hub>,
    store: Arc<dyn Store>,
    clock: Arc<dyn Clock>,
    providers: RwLock<Providers>,
    fallback: RwLock<Option<Arc<dyn DecisionProvider>>>,
    runs: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    by_card: RwLock<BTreeMap<String, String>>,
}

impl Runtime {
    /// Loads persisted runs from `store`.
    pub fn new(engine: Arc<Engine>, hub: Arc<Hub>, store: Arc<dyn Store>) -> Result<Self, RuntimeError> {
        let clock = engine.clock().clone();
        let mut runs = BTreeMap::new();
        let mut by_card = BTreeMap::new();
        for (id, bytes) in store.list(RUNS)? {
            let s: StoredRun =
                serde_json::from_slice(&bytes).map_err(|e| StoreError(format!("run {id}: {e}")))?;
            let def = Arc::new(load_sop(&s.config)?);
            by_card.insert(s.card_key.clone(), id.clone());
            let run = SopRun::from_record(s.record, def, clock.clone());
            runs.insert(
                id,
                Arc::new(Mutex::new(Slot {
                    card: s.card_key,
                    config: s.config,
                    run,
                })),
            );
        }
        Ok(Self {
            engine,
            hub,
            store,
            clock,
            providers: RwLock::new(Providers::new()),
            fallback: RwLock::new(None),
            runs: RwLock::new(runs),
            by_card: RwLock::new(by_card),
        })
    }

    /// Engine, hub and run store all in memory, with the hub verifying the
    /// engine's user tokens.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        let hub = Arc::new(Hub::new(clock.clone(), Arc::new(MemoryStore::new())).expect("empty memory store loads"));
        let engine = Arc::new(
            Engine::new(EngineConfig::default().with_clock(clock).with_verifier(hub.clone()))
                .expect("empty memory store loads"),
        );
        Self::new(engine, hub, Arc::new(MemoryStore::new())).expect("empty memory store loads")
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn set_provider(&self, agent_id: impl Into<String>, provider: Arc<dyn DecisionProvider>) {
        self.providers.write().insert(agent_id.into(), provider);
    }

    /// Provider for agents without one of their own.
    pub fn set_fallback_provider(&self, provider: Arc<dyn DecisionProvider>) {
        *self.fallback.write() = Some(provider);
    }

    fn providers_for(&self, def: &SopDef) -> Providers {
        let own = self.providers.read();
        let fallback = self.fallback.read();
        let mut out = Providers::new();
        for s in &def.steps {
            let id = s.agent_id();
            if let Some(p) = own.get(id).or(fallback.as_ref()) {
                out.insert(id.to_owned(), p.clone());
            }
        }
        out
    }

    fn slot(&self, run_id: &str) -> Result<Arc<Mutex<Slot>>, RuntimeError> {
        self.runs
            .read()
            .get(run_id)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownRun(run_id.to_owned()))
    }

    fn persist(&self, slot: &Slot) -> Result<(), RuntimeError> {
        let stored = StoredRun {
            card_key: slot.card.clone(),
            config: slot.config.clone(),
            record: slot.run.to_record(),
        };
        let bytes = serde_json::to_vec(&stored).expect("run serializes");
        self.store.put(RUNS, slot.run.run_id(), &bytes)?;
        Ok(())
    }

    fn summary(&self, slot: &Slot) -> Result<RunSummary, RuntimeError> {
        Ok(RunSummary {
            run_id: slot.run.run_id().to_owned(),
            card_key: slot.card.clone(),
            title: slot.run.def().title.clone(),
            status: slot.run.run_status(),
            steps: slot.run.statuses().clone(),
            routes: slot.run.routes().clone(),
            gates: slot.run.gates().clone(),
            lifecycle: self.engine.lifecycle(&slot.card)?,
        })
    }

    /// Validates a SOP config, registers its backing card and starts a run.
    pub fn start_run(&self, config: AnxConfig, who: &ChannelIdentity) -> Result<RunSummary, RuntimeError> {
        let def = Arc::new(load_sop(&config)?);
        let card = self.engine.register_card(config.clone(), who)?.to_string();
        let run_id = random_token("run_");
        self.hub
            .register_run(&run_id, def.uuids().map(str::to_owned))?;
        let run = SopRun::new(run_id.clone(), def, self.clock.clone());
        let slot = Slot { card: card.clone(), config, run };
        self.persist(&slot)?;
        let summary = self.summary(&slot)?;
        self.by_card.write().insert(card, run_id.clone());
        self.runs.write().insert(run_id, Arc::new(Mutex::new(slot)));
        Ok(summary)
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.read().keys().cloned().collect()
    }

    pub fn run_for_card(&self, card_key: &str) -> Option<String> {
        self.by_card.read().get(card_key).cloned()
    }

    pub fn status(&self, run_id: &str) -> Result<RunSummary, RuntimeError> {
        let slot = self.slot(run_id)?;
        let s = slot.lock();
        self.summary(&s)
    }

    pub fn trace(&self, run_id: &str) -> Result<Vec<TraceEvent>, RuntimeError> {
        Ok(self.slot(run_id)?.lock().run.trace().to_vec())
    }

    fn finish_card(&self, slot: &Slot) -> Result<(), RuntimeError> {
        let lifecycle = self.engine.lifecycle(&slot.card)?;
        match slot.run.run_status() {
            RunStatus::Completed => {
                if lifecycle == LifecycleState::Ready {
                    self.engine.step_progress(&slot.card, "system", json!({ "event": "run_completed" }))?;
                }
                if self.engine.lifecycle(&slot.card)? == LifecycleState::Executing {
                    self.engine.finish_run(&slot.card, true)?;
                }
            }
            RunStatus::Failed if !lifecycle.is_final() => {
                self.engine.finish_run(&slot.card, false)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn drive(&self, slot: &mut Slot) -> Result<(), RuntimeError> {
        let providers = self.providers_for(slot.run.def());
        let card = slot.card.clone();
        let mut hooks = CardHooks {
            engine: &self.engine,
            hub: &self.hub,
            card: &card,
        };
        let mut nodes = CardNodes {
            engine: &self.engine,
            card: &card,
            channel: "agent",
        };
        let driven = run_to_quiescence(&mut slot.run, &providers, &mut hooks, &mut nodes);
        self.persist(slot)?;
        driven?;
        self.finish_card(slot)
    }

    /// Executes ready steps through the registered providers until the run
    /// completes, fails, or waits for a human.
    pub fn advance(&self, run_id: &str) -> Result<RunSummary, RuntimeError> {
        let slot = self.slot(run_id)?;
        let mut s = slot.lock();
        self.drive(&mut s)?;
        self.summary(&s)
    }

    /// Completes one step with outputs supplied by its agent; routing goes
    /// through the provider registered for that agent. Does not advance.
    pub fn complete_step(&self, run_id: &str, uuid: &str, outputs: Map<String, Value>) -> Result<RunSummary, RuntimeError> {
        let slot = self.slot(run_id)?;
        let mut s = slot.lock();
        let step = s
            .run
            .def()
            .step(uuid)
            .cloned()
            .ok_or_else(|| SopError::UnknownStep(uuid.to_owned()))?;
        let providers = self.providers_for(s.run.def());
        let provider = providers
            .get(step.agent_id())
            .cloned()
            .ok_or_else(|| DriveError::ProviderMissing(step.agent_id().to_owned()))?;
        let card = s.card.clone();
        let mut nodes = CardNodes {
            engine: &self.engine,
            card: &card,
            channel: "agent",
        };
        let actor = Actor::agent(step.agent_id());
        let done = s.run.complete_step_single(uuid, outputs, provider.as_ref(), &actor, &mut nodes);
        self.persist(&s)?;
        done?;
        if self.engine.lifecycle(&card)? == LifecycleState::Ready {
            self.engine
                .step_progress(&card, "agent", json!({ "step": uuid, "event": "finished" }))?;
        }
        self.finish_card(&s)?;
        self.summary(&s)
    }

    /// Resolves the human gate on `uuid` and advances the run. The channel
    /// and the user token are checked before anything changes.
    pub fn resolve_human_gate(
        &self,
        run_id: &str,
        uuid: &str,
        decision: &str,
        who: &ChannelIdentity,
    ) -> Result<RunSummary, RuntimeError> {
        let slot = self.slot(run_id)?;
        let mut s = slot.lock();
        let card = s.card.clone();
        let gate = s.run.gates().get(uuid).cloned();
        if who.is_agent() {
            // Audited on the card; nothing else changes.
            let g = gate.unwrap_or_default();
            return Err(self.engine.resolve_step_gate(&card, &g, who, decision).unwrap_err().into());
        }
        let session = self.engine.check_human(who, "resolve_gate")?;
        let gate = gate.ok_or_else(|| RuntimeError::NoOpenGate(uuid.to_owned()))?;
        s.run.decision_arm(uuid, decision)?;
        self.engine.resolve_step_gate(&card, &gate, who, decision)?;
        let actor = Actor::human(if session.is_empty() { "human".to_owned() } else { session });
        let mut nodes = CardNodes {
            engine: &self.engine,
            card: &card,
            channel: "human_ui",
        };
        let resolved = s.run.resolve_gate(uuid, decision, &actor, &mut nodes);
        self.persist(&s)?;
        resolved?;
        self.drive(&mut s)?;
        self.summary(&s)
    }

    /// Steps of `run_id` blocked on a human, with their node snapshot for
    /// the reviewer.
    pub fn pending_gates(&self, run_id: &str) -> Result<Vec<(String, String, NodeSnapshot)>, RuntimeError> {
        let slot = self.slot(run_id)?;
        let s = slot.lock();
        let snap = self.engine.node_snapshot(&s.card)?;
        Ok(s.run
            .gates()
            .iter()
            .map(|(u, g)| (u.clone(), g.clone(), snap.clone()))
            .collect())
    }

    /// `run_step` on a run's card: `{"step": uuid, "outputs": {...}}`
    /// completes one step, no params advances the run. Other actions go to
    /// the engine.
    pub fn execute(&self, cmd: &CliCommand, who: &ChannelIdentity) -> Result<ExecResult, RuntimeError> {
        if cmd.action != "run_step" {
            return Ok(self.engine.execute(cmd, who)?);
        }
        let key = cmd.card_key.as_str();
        let run_id = self
            .run_for_card(key)
            .ok_or_else(|| RuntimeError::NotARun(key.to_owned()))?;
        let params = cmd
            .params_json()
            .map_err(|e| EngineError::BadParams(e.to_string()))?;
        let summary = match &params {
            Value::Null => self.advance(&run_id)?,
            Value::Object(o) => {
                let step = o
                    .get("step")
                    .and_then(Value::as_str)
                    .ok_or_else(|| EngineError::BadParams("expected {\"step\": uuid}".into()))?;
                let outputs = match o.get("outputs") {
                    None | Some(Value::Null) => Map::new(),
                    Some(Value::Object(m)) => m.clone(),
                    Some(_) => return Err(EngineError::BadParams("`outputs` must be an object".into()).into()),
                };
                self.complete_step(&run_id, step, outputs)?
            }
            _ => return Err(EngineError::BadParams("expected an object".into()).into()),
        };
        let status = match summary.status {
            RunStatus::WaitingHuman => ExecStatus::Confirming,
            RunStatus::Failed => ExecStatus::Error,
            _ => ExecStatus::Ok,
        };
        Ok(ExecResult {
            status,
            body: serde_json::to_value(&summary).expect("summary serializes"),
            new_state: summary.lifecycle,
        })
    }

    /// Steps each run is waiting on a human for.
    pub fn waiting(&self) -> BTreeMap<String, BTreeSet<String>> {
        let runs = self.runs.read();
        runs.iter()
            .filter_map(|(id, slot)| {
                let s = slot.lock();
                let gates: BTreeSet<String> = s.run.gates().keys().cloned().collect();
                (!gates.is_empty()).then(|| (id.clone(), gates))
            })
            .collect()
    }
}
