use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use anx_core::engine::Channel;
use anx_core::hub::{AppManifest, AssignmentStatus, Hub};

use crate::error::ApiError;

type HubState = Arc<Hub>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new("internal", e.to_string()))?
}

async fn publish(State(hub): State<HubState>, Json(m): Json<AppManifest>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let version = m.version.to_string();
        let id = hub.publish(m)?;
        Ok(Json(json!({ "app_id": id, "version": version })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct DiscoverQuery {
    q: String,
    k: Option<usize>,
}

async fn discover(State(hub): State<HubState>, Query(q): Query<DiscoverQuery>) -> Result<Json<Value>, ApiError> {
    let res = hub.discover(&q.q, q.k.unwrap_or(5))?;
    Ok(Json(serde_json::to_value(res).expect("result serializes")))
}

async fn manifest(State(hub): State<HubState>, Path(id): Path<String>) -> Result<Json<AppManifest>, ApiError> {
    Ok(Json(hub.get_manifest(&id)?))
}

#[derive(Debug, Default, Deserialize)]
struct TokenRequest {
    #[serde(default)]
    session_id: String,
}

/// Only reachable under `/ui`, so the caller is the human UI by construction.
async fn ui_token(State(hub): State<HubState>, Json(r): Json<TokenRequest>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let session = if r.session_id.is_empty() { "anonymous".to_owned() } else { r.session_id };
        let t = hub.issue_user_token(&session, Channel::HumanUi)?;
        Ok(Json(serde_json::to_value(t).expect("token serializes")))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct TokenBody {
    token: String,
}

async fn ui_revoke(State(hub): State<HubState>, Json(b): Json<TokenBody>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!({ "revoked": hub.revoke_user_token(&b.token)? })))).await
}

async fn verify(State(hub): State<HubState>, Json(b): Json<TokenBody>) -> Json<Value> {
    Json(serde_json::to_value(hub.verify_user_token(&b.token)).expect("check serializes"))
}

#[derive(Debug, Deserialize)]
struct RegisterRun {
    steps: Vec<String>,
}

async fn register_run(
    State(hub): State<HubState>,
    Path(id): Path<String>,
    Json(b): Json<RegisterRun>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        hub.register_run(&id, b.steps)?;
        Ok(Json(json!({ "run_id": id, "steps": hub.run_steps(&id)? })))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
}

async fn run_view(
    State(hub): State<HubState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<Value>, ApiError> {
    let steps = hub.run_steps(&id)?;
    let events = hub.events(&id, q.after)?;
    Ok(Json(json!({ "run_id": id, "steps": steps, "events": events })))
}

async fn get_assignment(
    State(hub): State<HubState>,
    Path((id, step)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    match hub.assignment(&id, &step)? {
        Some(a) => Ok(Json(serde_json::to_value(a).expect("assignment serializes"))),
        None => Err(ApiError::new("no_assignment", format!("step `{step}` is not assigned"))),
    }
}

#[derive(Debug, Deserialize)]
struct AssignBody {
    agent_id: String,
    /// Absent for a new assignment; otherwise the next status.
    status: Option<AssignmentStatus>,
}

async fn post_assignment(
    State(hub): State<HubState>,
    Path((id, step)): Path<(String, String)>,
    Json(b): Json<AssignBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let a = match b.status {
            None | Some(AssignmentStatus::Assigned) => hub.assign_step(&id, &step, &b.agent_id)?,
            Some(s) => hub.report_step(&id, &step, &b.agent_id, s)?,
        };
        Ok(Json(serde_json::to_value(a).expect("assignment serializes")))
    })
    .await
}

pub fn hub_router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/publish", post(publish))
        .route("/discover", get(discover))
        .route("/manifest/{app_id}", get(manifest))
        .route("/ui/token", post(ui_token))
        .route("/ui/token/revoke", post(ui_revoke))
        .route("/verify", post(verify))
        .route("/runs/{id}", get(run_view).post(register_run))
        .route("/runs/{id}/steps/{step}/assignment", get(get_assignment).post(post_assignment))
        .with_state(hub)
}
