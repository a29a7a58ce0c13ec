use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use anx_core::engine::EngineError;
use anx_core::hub::HubError;
use anx_core::runtime::RuntimeError;

/// Error body `{"error": {"code", "message"}}` with a status derived from the code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status_for(code),
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "missing_user_token" => StatusCode::UNAUTHORIZED,
        "channel_violation" | "invalid_user_token" | "sensitive_via_agent_channel" => StatusCode::FORBIDDEN,
        "unknown_card" | "unknown_run" | "unknown_app" | "unknown_node" | "unknown_gate" | "unknown_step"
        | "not_a_run" | "no_assignment" => StatusCode::NOT_FOUND,
        "wrong_state" | "already_assigned" | "version_regression" | "illegal_status_regression" | "not_assigned"
        | "not_assignee" | "no_open_gate" => StatusCode::CONFLICT,
        "dataset_unreachable" | "dataset_shape_error" => StatusCode::BAD_GATEWAY,
        "verifier_unavailable" => StatusCode::SERVICE_UNAVAILABLE,
        "store_error" | "render_error" | "internal" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<anx_core::cli::CliError> for ApiError {
    fn from(e: anx_core::cli::CliError) -> Self {
        Self::new("cli_syntax", e.to_string())
    }
}

impl From<anx_core::markup::ConfigError> for ApiError {
    fn from(e: anx_core::markup::ConfigError) -> Self {
        Self::new("schema_error", e.to_string())
    }
}
