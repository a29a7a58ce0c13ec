//! ANX Core: card registry, lifecycle state machine, sensitive-value vault,
//! option resolution, node records and audit.
//!
//! Every card is its own serialization domain: commands on one card are
//! applied under that card's lock, commands on distinct cards run in
//! parallel.

mod audit;
mod channel;
mod lifecycle;
mod options;
mod vault;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use audit::{audit_ndjson, AuditEvent};
pub use channel::{Channel, ChannelIdentity, DenyAll, TokenCheck, TokenVerifier};
pub use lifecycle::{is_allowed, targets, LifecycleEvent, LifecycleState, TRANSITIONS};
pub use options::{DatasetFetcher, HttpFetcher};
pub use vault::{Secret, SensitiveEntry, Vault, VaultCipher};

use crate::cli::CliCommand;
use crate::clock::{Clock, SystemClock};
use crate::keys::{random_token, CardKey};
use crate::markup::{
    render_markup, AnxConfig, AnxOption, ConfigError, ConfigKind, Dataset, ItemKind, RenderError,
    ResolvedOptions, ViewerRole, MASK,
};
use crate::sop::{NodeRecord, NodeSnapshot};
use crate::store::{MemoryStore, Store, StoreError};
use options::{fetch_options, ResolveError};

use LifecycleEvent as Ev;
use LifecycleState as St;

const CARDS: &str = "cards";
const VAULTS: &str = "vaults";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("unknown card `{0}`")]
    UnknownCard(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("invalid value for `{nick}`: {reason}")]
    Validation { nick: String, reason: String },
    #[error("`{0}` is sensitive and cannot be supplied over the agent channel; waiting for the UI")]
    SensitiveViaAgentChannel(String),
    #[error("dataset {url} unreachable: {reason}")]
    DatasetUnreachable { url: String, reason: String },
    #[error("dataset {url} has an unexpected shape: {reason}")]
    DatasetShape { url: String, reason: String },
    #[error("`{attempted}` not allowed in state {current}")]
    WrongState {
        current: LifecycleState,
        attempted: String,
    },
    #[error("`{0}` is only available on the human UI channel")]
    ChannelViolation(String),
    #[error("user token missing, unknown, expired or revoked")]
    InvalidUserToken,
    #[error("token verification unavailable: {0}")]
    VerifierUnavailable(String),
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("unknown field `{0}`")]
    UnknownNick(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("bad params: {0}")]
    BadParams(String),
    #[error("action failed: {0}")]
    ActionFailed(String),
    #[error(transparent)]
    Schema(#[from] ConfigError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl EngineError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownCard(_) => "unknown_card",
            Self::UnknownAction(_) => "unknown_action",
            Self::Validation { .. } => "validation_error",
            Self::SensitiveViaAgentChannel(_) => "sensitive_via_agent_channel",
            Self::DatasetUnreachable { .. } => "dataset_unreachable",
            Self::DatasetShape { .. } => "dataset_shape_error",
            Self::WrongState { .. } => "wrong_state",
            Self::ChannelViolation(_) => "channel_violation",
            Self::InvalidUserToken => "invalid_user_token",
            Self::VerifierUnavailable(_) => "verifier_unavailable",
            Self::UnknownGate(_) => "unknown_gate",
            Self::UnknownNick(_) => "unknown_nick",
            Self::UnknownNode(_) => "unknown_node",
            Self::BadParams(_) => "bad_params",
            Self::ActionFailed(_) => "action_failed",
            Self::Schema(_) => "schema_error",
            Self::Render(_) => "render_error",
            Self::Store(_) => "store_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    WaitingUi,
    Confirming,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub body: Value,
    pub new_state: LifecycleState,
}

impl ExecResult {
    fn new(status: ExecStatus, body: Value, new_state: LifecycleState) -> Self {
        Self {
            status,
            body,
            new_state,
        }
    }
}

/// What a gate is holding back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GatePurpose {
    /// A card action deferred until a human approves it.
    Action { action: String },
    /// A workflow human-gate step.
    Step { run_id: String, step: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmationGate {
    pub gate_id: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    /// Always `human_ui`.
    pub required_channel: String,
    pub purpose: GatePurpose,
}

/// Runs the side effect behind a card action (submit and other button taps).
pub trait ActionHandler: Send + Sync {
    fn run(&self, ctx: &ActionContext<'_>) -> Result<Value, String>;
}

pub struct ActionContext<'a> {
    pub card_key: &'a str,
    pub action: &'a str,
    pub config: &'a AnxConfig,
    pub values: &'a BTreeMap<String, String>,
    /// Vault contents; only action handlers ever see these.
    pub secrets: &'a BTreeMap<String, Secret>,
}

/// Accepts every action and reports which fields it received.
#[derive(Debug, Default, Clone, Copy)]
pub struct AcceptAll;

impl ActionHandler for AcceptAll {
    fn run(&self, ctx: &ActionContext<'_>) -> Result<Value, String> {
        Ok(json!({
            "accepted": true,
            "action": ctx.action,
            "fields": ctx.values.keys().chain(ctx.secrets.keys()).collect::<Vec<_>>(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub node_id: String,
    pub version: u64,
    pub payload: Value,
    pub written_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeEntry {
    version: u64,
    payload: Value,
    written_at: DateTime<Utc>,
    /// Position in the card's overall write order.
    seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CardRecord {
    key: CardKey,
    config: AnxConfig,
    values: BTreeMap<String, String>,
    lifecycle: LifecycleState,
    resume: Option<LifecycleState>,
    awaiting: BTreeSet<String>,
    gates: BTreeMap<String, ConfirmationGate>,
    audit: Vec<AuditEvent>,
    nodes: BTreeMap<String, NodeEntry>,
    node_seq: u64,
    option_cache: BTreeMap<String, Vec<AnxOption>>,
    result: Option<Value>,
}

struct Card {
    rec: CardRecord,
    vault: Vault,
}

pub struct EngineConfig {
    pub clock: Arc<dyn Clock>,
    pub verifier: Arc<dyn TokenVerifier>,
    pub fetcher: Arc<dyn DatasetFetcher>,
    pub actions: Arc<dyn ActionHandler>,
    pub store: Arc<dyn Store>,
    pub cipher: VaultCipher,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            clock: Arc::new(SystemClock),
            verifier: Arc::new(DenyAll),
            fetcher: Arc::new(HttpFetcher::default()),
            actions: Arc::new(AcceptAll),
            store: Arc::new(MemoryStore::new()),
            cipher: VaultCipher::ephemeral(),
        }
    }
}

impl EngineConfig {
    pub fn with_clock(mut self, c: Arc<dyn Clock>) -> Self {
        self.clock = c;
        self
    }

    pub fn with_verifier(mut self, v: Arc<dyn TokenVerifier>) -> Self {
        self.verifier = v;
        self
    }

    pub fn with_fetcher(mut self, f: Arc<dyn DatasetFetcher>) -> Self {
        self.fetcher = f;
        self
    }

    pub fn with_actions(mut self, a: Arc<dyn ActionHandler>) -> Self {
        self.actions = a;
        self
    }

    pub fn with_store(mut self, s: Arc<dyn Store>, cipher: VaultCipher) -> Self {
        self.store = s;
        self.cipher = cipher;
        self
    }
}

pub struct Engine {
    cfg: EngineConfig,
    cards: RwLock<HashMap<String, Arc<Mutex<Card>>>>,
}

/// Actions understood by [`Engine::execute`] besides button taps.
pub const BUILTIN_ACTIONS: &[&str] = &[
    "set_form",
    "submit",
    "get_markup",
    "get_state",
    "read_node",
    "confirm",
    "cancel",
];

fn channel_name(who: &ChannelIdentity) -> &'static str {
    who.name()
}

/// Replaces every occurrence of any secret inside string leaves and keys.
fn scrub(v: &mut Value, secrets: &[String]) {
    if secrets.is_empty() {
        return;
    }
    let clean = |s: &str| {
        let mut out = s.to_owned();
        for sec in secrets {
            if out.contains(sec.as_str()) {
                out = out.replace(sec.as_str(), MASK);
            }
        }
        out
    };
    match v {
        Value::String(s) => *s = clean(s),
        Value::Array(a) => a.iter_mut().for_each(|x| scrub(x, secrets)),
        Value::Object(m) => {
            let old = std::mem::take(m);
            for (k, mut x) in old {
                scrub(&mut x, secrets);
                m.insert(clean(&k), x);
            }
        }
        _ => {}
    }
}

impl Card {
    fn secrets(&self) -> Vec<String> {
        self.vault
            .entries()
            .map(|e| e.value.expose().to_owned())
            .filter(|s| !s.is_empty())
            .collect()
    }

    fn audit(&mut self, now: DateTime<Utc>, event: &str, channel: &str, detail: Option<Value>) {
        self.rec.audit.push(AuditEvent {
            ts: now,
            card_key: self.rec.key.to_string(),
            event: event.to_owned(),
            channel: channel.to_owned(),
            from: None,
            to: None,
            detail,
        });
    }

    /// Applies one table transition and records it as one audit event.
    fn transition(&mut self, now: DateTime<Utc>, ev: LifecycleEvent, to: LifecycleState, channel: &str, detail: Option<Value>) {
        let from = self.rec.lifecycle;
        assert!(
            is_allowed(from, ev, to),
            "transition {from} --{}--> {to} is not in the table",
            ev.as_str()
        );
        self.rec.lifecycle = to;
        self.rec.audit.push(AuditEvent {
            ts: now,
            card_key: self.rec.key.to_string(),
            event: ev.as_str().to_owned(),
            channel: channel.to_owned(),
            from: Some(from),
            to: Some(to),
            detail,
        });
    }

    fn wrong_state(&self, attempted: &str) -> EngineError {
        EngineError::WrongState {
            current: self.rec.lifecycle,
            attempted: attempted.to_owned(),
        }
    }

    fn state_json(&self) -> Value {
        let r = &self.rec;
        let mut sensitive = Map::new();
        for nick in r.config.sensitive_nicks() {
            let entry = self.vault.get(&nick);
            sensitive.insert(
                nick,
                json!({
                    "value": entry.map(|_| MASK),
                    "has_ref": entry.is_some(),
                    "ref_token": entry.map(|e| e.ref_token.clone()),
                }),
            );
        }
        let gates: Vec<Value> = r
            .gates
            .values()
            .map(|g| {
                json!({
                    "gate_id": g.gate_id,
                    "description": g.description,
                    "created_at": g.created_at,
                    "required_channel": g.required_channel,
                    "purpose": g.purpose,
                })
            })
            .collect();
        let mut out = json!({
            "card_key": r.key,
            "kind": r.config.kind,
            "title": r.config.title,
            "lifecycle": r.lifecycle,
            "values": r.values,
            "sensitive": sensitive,
            "awaiting": r.awaiting,
            "gates": gates,
        });
        if let Some(res) = &r.result {
            out["result"] = res.clone();
        }
        out
    }
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        let mut cards = HashMap::new();
        let vaults: HashMap<String, Vec<u8>> = cfg.store.list(VAULTS)?.into_iter().collect();
        for (key, bytes) in cfg.store.list(CARDS)? {
            let rec: CardRecord = serde_json::from_slice(&bytes)
                .map_err(|e| StoreError(format!("card {key}: {e}")))?;
            let vault = match vaults.get(&key) {
                Some(sealed) => cfg.cipher.open(sealed).map_err(|e| StoreError(format!("vault {key}: {e}")))?,
                None => Vault::default(),
            };
            cards.insert(key, Arc::new(Mutex::new(Card { rec, vault })));
        }
        Ok(Self {
            cfg,
            cards: RwLock::new(cards),
        })
    }

    /// In-memory engine with defaults and the given token verifier.
    pub fn in_memory(verifier: Arc<dyn TokenVerifier>) -> Self {
        Self::new(EngineConfig::default().with_verifier(verifier)).expect("empty memory store loads")
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.cfg.clock
    }

    fn now(&self) -> DateTime<Utc> {
        self.cfg.clock.now()
    }

    fn card(&self, key: &str) -> Result<Arc<Mutex<Card>>, EngineError> {
        self.cards
            .read()
            .get(key)
            .cloned()
            .ok_or_else(|| EngineError::UnknownCard(key.to_owned()))
    }

    fn persist(&self, card: &Card, vault_changed: bool) -> Result<(), EngineError> {
        let bytes = serde_json::to_vec(&card.rec).expect("card record serializes");
        self.cfg.store.put(CARDS, card.rec.key.as_str(), &bytes)?;
        if vault_changed {
            let sealed = self.cfg.cipher.seal(&card.vault);
            self.cfg.store.put(VAULTS, card.rec.key.as_str(), &sealed)?;
        }
        Ok(())
    }

    /// Verifies the human channel and returns the token's session id.
    pub fn check_human(&self, who: &ChannelIdentity, attempted: &str) -> Result<String, EngineError> {
        match who {
            ChannelIdentity::Agent => Err(EngineError::ChannelViolation(attempted.to_owned())),
            ChannelIdentity::HumanUi { user_token } => {
                let check = self
                    .cfg
                    .verifier
                    .verify(user_token)
                    .map_err(EngineError::VerifierUnavailable)?;
                match (check.valid, check.session_id) {
                    (true, sid) => Ok(sid.unwrap_or_default()),
                    (false, _) => Err(EngineError::InvalidUserToken),
                }
            }
        }
    }

    /// Agents pass; human requests must carry a valid token.
    fn check_caller(&self, who: &ChannelIdentity, attempted: &str) -> Result<(), EngineError> {
        if who.is_agent() {
            Ok(())
        } else {
            self.check_human(who, attempted).map(|_| ())
        }
    }

    /// Records a rejected human-only request from the agent channel.
    fn violation(&self, card: &Arc<Mutex<Card>>, attempted: &str) -> EngineError {
        let mut c = card.lock();
        c.audit(self.now(), "channel_violation", "agent", Some(json!({ "attempted": attempted })));
        let _ = self.persist(&c, false);
        EngineError::ChannelViolation(attempted.to_owned())
    }

    // ---- registry ----

    pub fn register_card(&self, config: AnxConfig, who: &ChannelIdentity) -> Result<CardKey, EngineError> {
        self.check_caller(who, "register")?;
        let mut cards = self.cards.write();
        let mut rng = rand::thread_rng();
        let mut width = 4;
        let mut tries = 0;
        let key = loop {
            let k = CardKey::random(&mut rng, width);
            if !cards.contains_key(k.as_str()) {
                break k;
            }
            tries += 1;
            if tries % 8 == 0 {
                width += 1;
            }
        };
        let mut card = Card {
            rec: CardRecord {
                key: key.clone(),
                config,
                values: BTreeMap::new(),
                lifecycle: St::Created,
                resume: None,
                awaiting: BTreeSet::new(),
                gates: BTreeMap::new(),
                audit: Vec::new(),
                nodes: BTreeMap::new(),
                node_seq: 0,
                option_cache: BTreeMap::new(),
                result: None,
            },
            vault: Vault::default(),
        };
        card.transition(self.now(), Ev::Register, St::Ready, channel_name(who), None);
        self.persist(&card, false)?;
        cards.insert(key.to_string(), Arc::new(Mutex::new(card)));
        Ok(key)
    }

    pub fn card_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.cards.read().keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn lifecycle(&self, key: &str) -> Result<LifecycleState, EngineError> {
        Ok(self.card(key)?.lock().rec.lifecycle)
    }

    pub fn config(&self, key: &str) -> Result<AnxConfig, EngineError> {
        Ok(self.card(key)?.lock().rec.config.clone())
    }

    pub fn audit(&self, key: &str) -> Result<Vec<AuditEvent>, EngineError> {
        Ok(self.card(key)?.lock().rec.audit.clone())
    }

    /// Open gates on the card.
    pub fn gates(&self, key: &str) -> Result<Vec<ConfirmationGate>, EngineError> {
        Ok(self.card(key)?.lock().rec.gates.values().cloned().collect())
    }

    /// Live reference tokens by nick.
    pub fn sensitive_refs(&self, key: &str) -> Result<BTreeMap<String, String>, EngineError> {
        let card = self.card(key)?;
        let c = card.lock();
        Ok(c.vault.entries().map(|e| (e.nick.clone(), e.ref_token.clone())).collect())
    }

    // ---- options ----

    fn options_for(&self, c: &mut Card, nick: &str) -> Result<Vec<AnxOption>, EngineError> {
        let item = c
            .rec
            .config
            .item(nick)
            .ok_or_else(|| EngineError::UnknownNick(nick.to_owned()))?;
        let set = item
            .options_set
            .clone()
            .ok_or_else(|| EngineError::UnknownNick(nick.to_owned()))?;
        if let Dataset::Url(url) = &set.dataset {
            if let Some(hit) = c.rec.option_cache.get(url) {
                return Ok(hit.clone());
            }
        }
        let opts = fetch_options(self.cfg.fetcher.as_ref(), &set).map_err(|e| {
            let url = set.url().unwrap_or_default().to_owned();
            match e {
                ResolveError::Unreachable(reason) => EngineError::DatasetUnreachable { url, reason },
                ResolveError::Shape(reason) => EngineError::DatasetShape { url, reason },
            }
        })?;
        if let Dataset::Url(url) = &set.dataset {
            c.rec.option_cache.insert(url.clone(), opts.clone());
        }
        Ok(opts)
    }

    /// Options of an `options` item; url datasets are fetched once per card.
    pub fn resolve_options(&self, key: &str, nick: &str) -> Result<Vec<AnxOption>, EngineError> {
        let card = self.card(key)?;
        let mut c = card.lock();
        let had = c.rec.option_cache.len();
        let opts = self.options_for(&mut c, nick)?;
        if c.rec.option_cache.len() != had {
            self.persist(&c, false)?;
        }
        Ok(opts)
    }

    // ---- reads ----

    /// Markup for `who`. Url-backed options are inlined for the human view
    /// (best effort) and for agents only when `resolve` is set; otherwise
    /// they are rendered by reference. Vault values are never rendered.
    pub fn get_markup(&self, key: &str, who: &ChannelIdentity, resolve: bool) -> Result<String, EngineError> {
        let card = self.card(key)?;
        self.check_caller(who, "get_markup")?;
        let mut c = card.lock();
        let mut resolved = ResolvedOptions::new();
        let url_items: Vec<String> = c
            .rec
            .config
            .items
            .iter()
            .filter(|i| i.options_set.as_ref().is_some_and(|o| o.url().is_some()))
            .map(|i| i.nick.clone())
            .collect();
        for nick in url_items {
            let url = c.rec.config.item(&nick).and_then(|i| i.options_set.as_ref()).and_then(|o| o.url()).map(str::to_owned);
            let cached = url.and_then(|u| c.rec.option_cache.get(&u).cloned());
            let opts = match cached {
                Some(o) if resolve || !who.is_agent() => Some(o),
                None if resolve || !who.is_agent() => self.options_for(&mut c, &nick).ok(),
                _ => None,
            };
            if let Some(o) = opts {
                resolved.insert(nick, o);
            }
        }
        let mut values = c.rec.values.clone();
        for e in c.vault.entries() {
            values.insert(e.nick.clone(), MASK.to_owned());
        }
        let viewer = if who.is_agent() { ViewerRole::Agent } else { ViewerRole::HumanUi };
        let text = render_markup(&c.rec.config, &values, c.rec.key.as_str(), viewer, &resolved)?;
        let mut v = Value::String(text);
        scrub(&mut v, &c.secrets());
        Ok(v.as_str().unwrap_or_default().to_owned())
    }

    /// Snapshot of lifecycle, values, masked sensitive fields and open gates.
    pub fn get_state(&self, key: &str, who: &ChannelIdentity) -> Result<Value, EngineError> {
        let card = self.card(key)?;
        self.check_caller(who, "get_state")?;
        let c = card.lock();
        let mut v = c.state_json();
        scrub(&mut v, &c.secrets());
        Ok(v)
    }

    // ---- commands ----

    pub fn execute(&self, cmd: &CliCommand, who: &ChannelIdentity) -> Result<ExecResult, EngineError> {
        let key = cmd.card_key.as_str();
        let card = self.card(key)?;
        let action = cmd.action.as_str();
        let params = cmd
            .params_json()
            .map_err(|e| EngineError::BadParams(format!("params are not JSON: {e}")))?;

        let mut result = match action {
            "get_markup" => {
                let resolve = params.get("resolve_options").and_then(Value::as_bool).unwrap_or(false);
                let state = self.lifecycle(key)?;
                let markup = self.get_markup(key, who, resolve)?;
                ExecResult::new(ExecStatus::Ok, json!({ "markup": markup }), state)
            }
            "get_state" => {
                let state = self.lifecycle(key)?;
                ExecResult::new(ExecStatus::Ok, self.get_state(key, who)?, state)
            }
            "read_node" => {
                let node = params
                    .get("node_id")
                    .and_then(Value::as_str)
                    .ok_or_else(|| EngineError::BadParams("expected {\"node_id\": ...}".into()))?;
                let n = self.read_node(key, node)?;
                ExecResult::new(ExecStatus::Ok, serde_json::to_value(n).expect("node serializes"), self.lifecycle(key)?)
            }
            "confirm" | "cancel" => {
                if who.is_agent() {
                    return Err(self.violation(&card, action));
                }
                let gate = params
                    .get("gate_id")
                    .and_then(Value::as_str)
                    .ok_or_else(|| EngineError::BadParams("expected {\"gate_id\": ...}".into()))?;
                if action == "confirm" {
                    self.confirm(key, gate, who)?
                } else {
                    self.cancel(key, gate, who)?
                }
            }
            "set_form" => {
                self.check_caller(who, action)?;
                let mut c = card.lock();
                let r = self.set_form(&mut c, &params, who);
                self.persist(&c, false)?;
                r?
            }
            _ => {
                let is_tap = action == "submit"
                    || card
                        .lock()
                        .rec
                        .config
                        .items
                        .iter()
                        .any(|i| i.kind == ItemKind::Button && i.tap.as_deref() == Some(action));
                if !is_tap {
                    return Err(EngineError::UnknownAction(action.to_owned()));
                }
                self.check_caller(who, action)?;
                let mut c = card.lock();
                let r = self.submit(&mut c, action, who);
                self.persist(&c, false)?;
                r?
            }
        };
        if who.is_agent() {
            let secrets = card.lock().secrets();
            scrub(&mut result.body, &secrets);
        }
        Ok(result)
    }

    fn set_form(&self, c: &mut Card, params: &Value, who: &ChannelIdentity) -> Result<ExecResult, EngineError> {
        if c.rec.config.kind != ConfigKind::Form {
            return Err(EngineError::UnknownAction("set_form".into()));
        }
        if !matches!(c.rec.lifecycle, St::Ready | St::Executing | St::WaitingUi) {
            return Err(c.wrong_state("set_form"));
        }
        let obj = params
            .as_object()
            .ok_or_else(|| EngineError::BadParams("set_form expects a JSON object".into()))?;

        let mut sensitive = Vec::new();
        for nick in obj.keys() {
            match c.rec.config.item(nick) {
                Some(i) if i.kind.carries_value() => {
                    if i.sensitive {
                        sensitive.push(nick.clone());
                    }
                }
                _ => {
                    return Err(EngineError::Validation {
                        nick: nick.clone(),
                        reason: "no such field".into(),
                    })
                }
            }
        }
        if !sensitive.is_empty() {
            if !who.is_agent() {
                return Err(EngineError::Validation {
                    nick: sensitive[0].clone(),
                    reason: "sensitive fields are submitted through submit_sensitive".into(),
                });
            }
            let now = self.now();
            if c.rec.lifecycle != St::WaitingUi {
                c.rec.resume = Some(c.rec.lifecycle);
            }
            c.rec.awaiting.extend(sensitive.iter().cloned());
            c.transition(now, Ev::SensitiveViaAgent, St::WaitingUi, "agent", Some(json!({ "fields": sensitive })));
            return Err(EngineError::SensitiveViaAgentChannel(sensitive[0].clone()));
        }

        let mut updates = BTreeMap::new();
        for (nick, v) in obj {
            let s = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                Value::Bool(b) => b.to_string(),
                Value::Null => String::new(),
                _ => {
                    return Err(EngineError::Validation {
                        nick: nick.clone(),
                        reason: "expected a string".into(),
                    })
                }
            };
            let is_options = c.rec.config.item(nick).is_some_and(|i| i.kind == ItemKind::Options);
            if is_options && !s.is_empty() {
                let opts = self.options_for(c, nick)?;
                if !opts.iter().any(|o| o.value == s) {
                    return Err(EngineError::Validation {
                        nick: nick.clone(),
                        reason: format!("`{s}` is not one of the options"),
                    });
                }
            }
            updates.insert(nick.clone(), s);
        }
        for (nick, s) in &updates {
            if s.is_empty() {
                c.rec.values.remove(nick);
            } else {
                c.rec.values.insert(nick.clone(), s.clone());
            }
        }
        let to = match c.rec.lifecycle {
            St::WaitingUi => St::WaitingUi,
            _ => St::Executing,
        };
        let fields: Vec<&String> = updates.keys().collect();
        c.transition(self.now(), Ev::SetForm, to, channel_name(who), Some(json!({ "fields": fields })));
        let status = if to == St::WaitingUi { ExecStatus::WaitingUi } else { ExecStatus::Ok };
        Ok(ExecResult::new(status, json!({ "stored": fields }), to))
    }

    fn run_action(&self, c: &mut Card, action: &str) -> Result<Value, String> {
        let secrets = c.vault.secrets();
        self.cfg.actions.run(&ActionContext {
            card_key: c.rec.key.as_str(),
            action,
            config: &c.rec.config,
            values: &c.rec.values,
            secrets: &secrets,
        })
    }

    fn submit(&self, c: &mut Card, action: &str, who: &ChannelIdentity) -> Result<ExecResult, EngineError> {
        if c.rec.config.kind != ConfigKind::Form {
            return Err(EngineError::UnknownAction(action.into()));
        }
        if !matches!(c.rec.lifecycle, St::Ready | St::Executing) {
            return Err(c.wrong_state(action));
        }
        let ch = channel_name(who);
        let now = self.now();
        let mut missing_sensitive = Vec::new();
        for item in c.rec.config.items.iter().filter(|i| i.required) {
            if item.sensitive {
                if !c.vault.contains(&item.nick) {
                    missing_sensitive.push(item.nick.clone());
                }
            } else if !c.rec.values.contains_key(&item.nick) {
                return Err(EngineError::Validation {
                    nick: item.nick.clone(),
                    reason: "required".into(),
                });
            }
        }
        if !missing_sensitive.is_empty() {
            c.rec.resume = Some(c.rec.lifecycle);
            c.rec.awaiting.extend(missing_sensitive.iter().cloned());
            c.transition(now, Ev::SubmitNeedsSensitive, St::WaitingUi, ch, Some(json!({ "fields": missing_sensitive })));
            return Ok(ExecResult::new(
                ExecStatus::WaitingUi,
                json!({ "awaiting": missing_sensitive }),
                St::WaitingUi,
            ));
        }
        if c.rec.config.action_requires_confirmation(action) {
            let gate = ConfirmationGate {
                gate_id: random_token("gate_"),
                description: format!("Confirm `{action}` on \"{}\"", c.rec.config.title),
                created_at: now,
                required_channel: "human_ui".into(),
                purpose: GatePurpose::Action {
                    action: action.to_owned(),
                },
            };
            let body = json!({ "gate_id": gate.gate_id, "description": gate.description });
            c.rec.gates.insert(gate.gate_id.clone(), gate);
            c.transition(now, Ev::SubmitNeedsConfirm, St::Confirming, ch, Some(body.clone()));
            return Ok(ExecResult::new(ExecStatus::Confirming, body, St::Confirming));
        }
        match self.run_action(c, action) {
            Ok(v) => {
                c.rec.result = Some(v.clone());
                c.transition(now, Ev::Submit, St::Completed, ch, Some(json!({ "action": action })));
                Ok(ExecResult::new(ExecStatus::Ok, json!({ "result": v }), St::Completed))
            }
            Err(e) => {
                c.transition(now, Ev::ActionFailed, St::Failed, ch, Some(json!({ "action": action })));
                Err(EngineError::ActionFailed(e))
            }
        }
    }

    /// Stores sensitive values arriving over the UI channel and returns
    /// their reference tokens.
    pub fn submit_sensitive(
        &self,
        key: &str,
        fields: &BTreeMap<String, String>,
        who: &ChannelIdentity,
    ) -> Result<BTreeMap<String, String>, EngineError> {
        let card = self.card(key)?;
        if who.is_agent() {
            return Err(self.violation(&card, "submit_sensitive"));
        }
        self.check_human(who, "submit_sensitive")?;
        let mut c = card.lock();
        for (nick, v) in fields {
            match c.rec.config.item(nick) {
                Some(i) if i.sensitive => {}
                _ => return Err(EngineError::UnknownNick(nick.clone())),
            }
            if v.is_empty() {
                return Err(EngineError::Validation {
                    nick: nick.clone(),
                    reason: "empty value".into(),
                });
            }
        }
        if fields.is_empty() {
            return Ok(BTreeMap::new());
        }
        if !matches!(c.rec.lifecycle, St::Ready | St::Executing | St::WaitingUi) {
            return Err(c.wrong_state("submit_sensitive"));
        }
        let mut refs = BTreeMap::new();
        for (nick, v) in fields {
            refs.insert(nick.clone(), c.vault.put(nick, Secret::new(v.clone())));
            c.rec.values.remove(nick);
            c.rec.awaiting.remove(nick);
        }
        let nicks: Vec<&String> = fields.keys().collect();
        let detail = Some(json!({ "fields": nicks }));
        let now = self.now();
        if c.rec.lifecycle == St::WaitingUi && c.rec.awaiting.is_empty() {
            let to = c.rec.resume.take().unwrap_or(St::Ready);
            c.transition(now, Ev::SensitiveSatisfied, to, "human_ui", detail);
        } else {
            c.audit(now, "submit_sensitive", "human_ui", detail);
        }
        self.persist(&c, true)?;
        Ok(refs)
    }

    fn take_gate(&self, c: &mut Card, gate_id: &str, attempted: &str, want_step: bool) -> Result<ConfirmationGate, EngineError> {
        if c.rec.lifecycle != St::Confirming {
            return Err(c.wrong_state(attempted));
        }
        match c.rec.gates.get(gate_id) {
            Some(g) if matches!(g.purpose, GatePurpose::Step { .. }) == want_step => {}
            _ => return Err(EngineError::UnknownGate(gate_id.to_owned())),
        }
        Ok(c.rec.gates.remove(gate_id).expect("gate checked above"))
    }

    /// Approves a pending action gate and runs the deferred action.
    pub fn confirm(&self, key: &str, gate_id: &str, who: &ChannelIdentity) -> Result<ExecResult, EngineError> {
        let card = self.card(key)?;
        if who.is_agent() {
            return Err(self.violation(&card, "confirm"));
        }
        let session = self.check_human(who, "confirm")?;
        let mut c = card.lock();
        let gate = self.take_gate(&mut c, gate_id, "confirm", false)?;
        let GatePurpose::Action { action } = &gate.purpose else {
            unreachable!("take_gate filtered step gates")
        };
        let now = self.now();
        let detail = Some(json!({ "gate_id": gate_id, "session_id": session }));
        let r = match self.run_action(&mut c, action) {
            Ok(v) => {
                c.rec.result = Some(v.clone());
                c.transition(now, Ev::Confirm, St::Completed, "human_ui", detail);
                Ok(ExecResult::new(ExecStatus::Ok, json!({ "result": v }), St::Completed))
            }
            Err(e) => {
                c.transition(now, Ev::ActionFailed, St::Failed, "human_ui", detail);
                Err(EngineError::ActionFailed(e))
            }
        };
        self.persist(&c, false)?;
        r
    }

    /// Denies a pending action gate; the card goes back to editing.
    pub fn cancel(&self, key: &str, gate_id: &str, who: &ChannelIdentity) -> Result<ExecResult, EngineError> {
        let card = self.card(key)?;
        if who.is_agent() {
            return Err(self.violation(&card, "cancel"));
        }
        let session = self.check_human(who, "cancel")?;
        let mut c = card.lock();
        self.take_gate(&mut c, gate_id, "cancel", false)?;
        c.transition(
            self.now(),
            Ev::Cancel,
            St::Executing,
            "human_ui",
            Some(json!({ "gate_id": gate_id, "session_id": session })),
        );
        self.persist(&c, false)?;
        Ok(ExecResult::new(ExecStatus::Ok, json!({ "cancelled": gate_id }), St::Executing))
    }

    // ---- nodes ----

    /// Writes a node record; returns the new version.
    pub fn write_node(&self, key: &str, node_id: &str, payload: Value, who: &ChannelIdentity) -> Result<u64, EngineError> {
        self.check_caller(who, "write_node")?;
        self.write_node_as(key, node_id, payload, channel_name(who))
    }

    pub(crate) fn write_node_as(&self, key: &str, node_id: &str, payload: Value, channel: &str) -> Result<u64, EngineError> {
        if node_id.is_empty() || node_id.len() > 128 {
            return Err(EngineError::BadParams("node id must be 1..=128 bytes".into()));
        }
        let card = self.card(key)?;
        let mut c = card.lock();
        let now = self.now();
        c.rec.node_seq += 1;
        let seq = c.rec.node_seq;
        let version = c.rec.nodes.get(node_id).map_or(1, |n| n.version + 1);
        c.rec.nodes.insert(
            node_id.to_owned(),
            NodeEntry {
                version,
                payload,
                written_at: now,
                seq,
            },
        );
        c.audit(now, "write_node", channel, Some(json!({ "node_id": node_id, "version": version })));
        self.persist(&c, false)?;
        Ok(version)
    }

    pub fn read_node(&self, key: &str, node_id: &str) -> Result<NodeValue, EngineError> {
        let card = self.card(key)?;
        let c = card.lock();
        let n = c
            .rec
            .nodes
            .get(node_id)
            .ok_or_else(|| EngineError::UnknownNode(node_id.to_owned()))?;
        let mut payload = n.payload.clone();
        scrub(&mut payload, &c.secrets());
        Ok(NodeValue {
            node_id: node_id.to_owned(),
            version: n.version,
            payload,
            written_at: n.written_at,
        })
    }

    /// All node records of a card, oldest write first.
    pub fn node_snapshot(&self, key: &str) -> Result<NodeSnapshot, EngineError> {
        let card = self.card(key)?;
        let c = card.lock();
        let mut nodes: Vec<(&String, &NodeEntry)> = c.rec.nodes.iter().collect();
        nodes.sort_by_key(|(_, n)| n.seq);
        Ok(NodeSnapshot {
            records: nodes
                .into_iter()
                .map(|(id, n)| NodeRecord {
                    node_id: id.clone(),
                    version: n.version,
                    payload: n.payload.clone(),
                })
                .collect(),
        })
    }

    // ---- workflow cards ----

    /// Records progress of a workflow step on the run's backing card.
    pub fn step_progress(&self, key: &str, channel: &str, detail: Value) -> Result<LifecycleState, EngineError> {
        let card = self.card(key)?;
        let mut c = card.lock();
        let to = match c.rec.lifecycle {
            St::Ready | St::Executing => St::Executing,
            St::Confirming => St::Confirming,
            _ => return Err(c.wrong_state("step_progress")),
        };
        c.transition(self.now(), Ev::StepProgress, to, channel, Some(detail));
        self.persist(&c, false)?;
        Ok(to)
    }

    /// Opens a human-only gate for a workflow step.
    pub fn open_step_gate(&self, key: &str, run_id: &str, step: &str, description: &str) -> Result<String, EngineError> {
        let card = self.card(key)?;
        let mut c = card.lock();
        if !matches!(c.rec.lifecycle, St::Executing | St::Confirming) {
            return Err(c.wrong_state("open_gate"));
        }
        let now = self.now();
        let gate = ConfirmationGate {
            gate_id: random_token("gate_"),
            description: description.to_owned(),
            created_at: now,
            required_channel: "human_ui".into(),
            purpose: GatePurpose::Step {
                run_id: run_id.to_owned(),
                step: step.to_owned(),
            },
        };
        let id = gate.gate_id.clone();
        c.rec.gates.insert(id.clone(), gate);
        c.transition(now, Ev::GateOpened, St::Confirming, "system", Some(json!({ "gate_id": id, "step": step })));
        self.persist(&c, false)?;
        Ok(id)
    }

    /// Closes a workflow gate on behalf of a verified human. Returns the
    /// token's session id.
    pub fn resolve_step_gate(&self, key: &str, gate_id: &str, who: &ChannelIdentity, decision: &str) -> Result<String, EngineError> {
        let card = self.card(key)?;
        if who.is_agent() {
            return Err(self.violation(&card, "resolve_gate"));
        }
        let session = self.check_human(who, "resolve_gate")?;
        let mut c = card.lock();
        self.take_gate(&mut c, gate_id, "resolve_gate", true)?;
        let to = if c.rec.gates.is_empty() { St::Executing } else { St::Confirming };
        c.transition(
            self.now(),
            Ev::GateResolved,
            to,
            "human_ui",
            Some(json!({ "gate_id": gate_id, "decision": decision, "session_id": session })),
        );
        self.persist(&c, false)?;
        Ok(session)
    }

    /// Marks a workflow card finished.
    pub fn finish_run(&self, key: &str, ok: bool) -> Result<LifecycleState, EngineError> {
        let card = self.card(key)?;
        let mut c = card.lock();
        let now = self.now();
        match (ok, c.rec.lifecycle) {
            (true, St::Executing) => c.transition(now, Ev::RunFinished, St::Completed, "system", None),
            (false, St::Ready | St::Executing | St::Confirming) => {
                c.transition(now, Ev::ActionFailed, St::Failed, "system", None)
            }
            _ => return Err(c.wrong_state("finish_run")),
        }
        self.persist(&c, false)?;
        Ok(c.rec.lifecycle)
    }
}
