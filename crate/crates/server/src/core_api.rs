use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::request::Parts;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use anx_core::cli::{parse_command, CliCommand};
use anx_core::engine::{audit_ndjson, ChannelIdentity, Engine};
use anx_core::keys::CardKey;
use anx_core::markup::{parse_config, AnxConfig};
use anx_core::runtime::Runtime;
use anx_core::sop::trace_ndjson;

use crate::error::ApiError;
use crate::USER_TOKEN_HEADER;

#[derive(Clone)]
pub struct CoreState {
    pub runtime: Arc<Runtime>,
}

impl CoreState {
    pub fn new(runtime: Arc<Runtime>) -> Self {
        Self { runtime }
    }

    fn engine(&self) -> &Arc<Engine> {
        self.runtime.engine()
    }
}

/// Runs engine work off the async executor; it may block on storage or
/// on a remote token check.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new("internal", e.to_string()))?
}

/// A human-channel caller whose token the Hub accepted.
pub struct Human(ChannelIdentity);

impl FromRequestParts<CoreState> for Human {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &CoreState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(USER_TOKEN_HEADER)
            .and_then(|v| v.to_str().ok())
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::new("missing_user_token", "X-ANX-User-Token header required"))?
            .to_owned();
        let who = ChannelIdentity::human(token);
        let engine = state.engine().clone();
        let checked = who.clone();
        blocking(move || Ok(engine.check_human(&checked, "ui_request")?)).await?;
        Ok(Human(who))
    }
}

fn config_from(v: Value) -> Result<AnxConfig, ApiError> {
    let v = match v {
        Value::Object(mut m) if m.contains_key("config") => m.remove("config").unwrap_or_default(),
        other => other,
    };
    Ok(parse_config(&v.to_string())?)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ExecBody {
    Line {
        line: String,
    },
    Parts {
        card_key: String,
        action: String,
        #[serde(default)]
        params: Value,
    },
}

impl ExecBody {
    fn command(self) -> Result<CliCommand, ApiError> {
        match self {
            Self::Line { line } => Ok(parse_command(&line)?),
            Self::Parts { card_key, action, params } => {
                let params = match params {
                    Value::Null => String::new(),
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                let key = CardKey::parse(&card_key)
                    .ok_or_else(|| ApiError::new("cli_syntax", format!("invalid card key `{card_key}`")))?;
                Ok(CliCommand::new(key, action, params)?)
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct MarkupQuery {
    resolve_options: Option<bool>,
}

fn ndjson(body: String) -> impl IntoResponse {
    ([(CONTENT_TYPE, "application/x-ndjson")], body)
}

// ---- agent channel ----

async fn agent_register(State(s): State<CoreState>, Json(body): Json<Value>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let cfg = config_from(body)?;
        let key = s.engine().register_card(cfg, &ChannelIdentity::Agent)?;
        let lifecycle = s.engine().lifecycle(key.as_str())?;
        Ok(Json(json!({ "card_key": key.as_str(), "lifecycle": lifecycle })))
    })
    .await
}

async fn execute_as(s: CoreState, who: ChannelIdentity, body: ExecBody) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let cmd = body.command()?;
        let res = s.runtime.execute(&cmd, &who)?;
        Ok(Json(serde_json::to_value(res).expect("result serializes")))
    })
    .await
}

async fn agent_execute(State(s): State<CoreState>, Json(body): Json<ExecBody>) -> Result<Json<Value>, ApiError> {
    execute_as(s, ChannelIdentity::Agent, body).await
}

async fn markup_as(s: CoreState, key: String, who: ChannelIdentity, resolve: bool) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let markup = s.engine().get_markup(&key, &who, resolve)?;
        Ok(Json(json!({ "card_key": key, "markup": markup })))
    })
    .await
}

async fn agent_markup(
    State(s): State<CoreState>,
    Path(key): Path<String>,
    Query(q): Query<MarkupQuery>,
) -> Result<Json<Value>, ApiError> {
    markup_as(s, key, ChannelIdentity::Agent, q.resolve_options.unwrap_or(false)).await
}

async fn agent_state(State(s): State<CoreState>, Path(key): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(s.engine().get_state(&key, &ChannelIdentity::Agent)?))).await
}

async fn read_node(State(s): State<CoreState>, Path((key, node)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let n = s.engine().read_node(&key, &node)?;
        Ok(Json(serde_json::to_value(n).expect("node serializes")))
    })
    .await
}

async fn agent_audit(State(s): State<CoreState>, Path(key): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let body = blocking(move || Ok(audit_ndjson(&s.engine().audit(&key)?))).await?;
    Ok(ndjson(body))
}

// ---- agent SOP driver ----

fn summary(v: anx_core::runtime::RunSummary) -> Json<Value> {
    Json(serde_json::to_value(v).expect("summary serializes"))
}

async fn sop_start(State(s): State<CoreState>, Json(body): Json<Value>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(summary(s.runtime.start_run(config_from(body)?, &ChannelIdentity::Agent)?))).await
}

async fn sop_list(State(s): State<CoreState>) -> Json<Value> {
    Json(json!({ "runs": s.runtime.run_ids() }))
}

async fn sop_status(State(s): State<CoreState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(summary(s.runtime.status(&id)?))).await
}

async fn sop_advance(State(s): State<CoreState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(summary(s.runtime.advance(&id)?))).await
}

#[derive(Debug, Default, Deserialize)]
struct CompleteBody {
    #[serde(default)]
    outputs: Map<String, Value>,
}

async fn sop_complete(
    State(s): State<CoreState>,
    Path((id, step)): Path<(String, String)>,
    Json(body): Json<CompleteBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(summary(s.runtime.complete_step(&id, &step, body.outputs)?))).await
}

async fn sop_trace(State(s): State<CoreState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let body = blocking(move || Ok(trace_ndjson(&s.runtime.trace(&id)?))).await?;
    Ok(ndjson(body))
}

// ---- human channel ----

async fn ui_execute(State(s): State<CoreState>, Human(who): Human, Json(body): Json<ExecBody>) -> Result<Json<Value>, ApiError> {
    execute_as(s, who, body).await
}

async fn ui_markup(
    State(s): State<CoreState>,
    Human(who): Human,
    Path(key): Path<String>,
    Query(q): Query<MarkupQuery>,
) -> Result<Json<Value>, ApiError> {
    markup_as(s, key, who, q.resolve_options.unwrap_or(true)).await
}

async fn ui_state(State(s): State<CoreState>, Human(who): Human, Path(key): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(s.engine().get_state(&key, &who)?))).await
}

async fn ui_gates(State(s): State<CoreState>, _who: Human, Path(key): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!({ "gates": s.engine().gates(&key)? })))).await
}

#[derive(Debug, Deserialize)]
struct SensitiveBody {
    fields: BTreeMap<String, String>,
}

async fn ui_submit_sensitive(
    State(s): State<CoreState>,
    Human(who): Human,
    Path(key): Path<String>,
    Json(body): Json<SensitiveBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let refs = s.engine().submit_sensitive(&key, &body.fields, &who)?;
        let lifecycle = s.engine().lifecycle(&key)?;
        Ok(Json(json!({ "refs": refs, "lifecycle": lifecycle })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct GateBody {
    gate_id: String,
}

async fn ui_confirm(
    State(s): State<CoreState>,
    Human(who): Human,
    Path(key): Path<String>,
    Json(body): Json<GateBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let res = s.engine().confirm(&key, &body.gate_id, &who)?;
        Ok(Json(serde_json::to_value(res).expect("result serializes")))
    })
    .await
}

async fn ui_cancel(
    State(s): State<CoreState>,
    Human(who): Human,
    Path(key): Path<String>,
    Json(body): Json<GateBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let res = s.engine().cancel(&key, &body.gate_id, &who)?;
        Ok(Json(serde_json::to_value(res).expect("result serializes")))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct NodeBody {
    payload: Value,
}

async fn ui_write_node(
    State(s): State<CoreState>,
    Human(who): Human,
    Path((key, node)): Path<(String, String)>,
    Json(body): Json<NodeBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let version = s.engine().write_node(&key, &node, body.payload, &who)?;
        Ok(Json(json!({ "node_id": node, "version": version })))
    })
    .await
}

async fn ui_sop_gates(State(s): State<CoreState>, _who: Human, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let gates: Vec<Value> = s
            .runtime
            .pending_gates(&id)?
            .into_iter()
            .map(|(step, gate_id, snap)| {
                let nodes: Vec<Value> = snap
                    .records
                    .into_iter()
                    .map(|r| json!({ "node_id": r.node_id, "version": r.version, "payload": r.payload }))
                    .collect();
                json!({ "step": step, "gate_id": gate_id, "nodes": nodes })
            })
            .collect();
        Ok(Json(json!({ "run_id": id, "gates": gates })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    decision: String,
}

async fn ui_sop_resolve(
    State(s): State<CoreState>,
    Human(who): Human,
    Path((id, step)): Path<(String, String)>,
    Json(body): Json<DecisionBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(summary(s.runtime.resolve_human_gate(&id, &step, &body.decision, &who)?))).await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub fn core_router(state: CoreState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/agent/cards", post(agent_register))
        .route("/agent/execute", post(agent_execute))
        .route("/agent/cards/{key}/markup", get(agent_markup))
        .route("/agent/cards/{key}/state", get(agent_state))
        .route("/agent/cards/{key}/nodes/{node}", get(read_node))
        .route("/agent/cards/{key}/audit", get(agent_audit))
        .route("/agent/sop/runs", post(sop_start).get(sop_list))
        .route("/agent/sop/runs/{id}", get(sop_status))
        .route("/agent/sop/runs/{id}/advance", post(sop_advance))
        .route("/agent/sop/runs/{id}/steps/{step}/complete", post(sop_complete))
        .route("/agent/sop/runs/{id}/trace", get(sop_trace))
        .route("/ui/execute", post(ui_execute))
        .route("/ui/cards/{key}/markup", get(ui_markup))
        .route("/ui/cards/{key}/state", get(ui_state))
        .route("/ui/cards/{key}/gates", get(ui_gates))
        .route("/ui/cards/{key}/submit_sensitive", post(ui_submit_sensitive))
        .route("/ui/cards/{key}/confirm", post(ui_confirm))
        .route("/ui/cards/{key}/cancel", post(ui_cancel))
        .route("/ui/cards/{key}/nodes/{node}", get(ui_read_node).put(ui_write_node))
        .route("/ui/sop/runs/{id}/gates", get(ui_sop_gates))
        .route("/ui/sop/runs/{id}/gates/{step}", post(ui_sop_resolve))
        .with_state(state)
}

async fn ui_read_node(state: State<CoreState>, _who: Human, path: Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    read_node(state, path).await
}
