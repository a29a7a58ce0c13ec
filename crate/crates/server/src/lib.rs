//! HTTP surfaces for ANX Core and ANXHub.
//!
//! Core serves two prefixes. `/agent/*` is the agent channel: card
//! registration, `execute`, redacted markup and state, node reads and the
//! SOP driver under `/agent/sop/*`. `/ui/*` is the human channel and requires
//! an `X-ANX-User-Token` header on every request (401 when absent, 403 when
//! the Hub rejects it). Vault ingress, confirmation and gate resolution exist
//! only there.
//!
//! The Hub serves `/publish`, `/discover`, `/manifest/{app_id}`,
//! `/ui/token`, `/verify` and the run-assignment routes under `/runs`.

mod core_api;
mod error;
mod hub_api;
mod settings;
mod verify;

pub use core_api::{core_router, CoreState};
pub use error::ApiError;
pub use hub_api::hub_router;
pub use settings::{build_core, build_hub, CoreSettings, HubSettings, SettingsError};
pub use verify::RemoteVerifier;

/// Header carrying the User Token on `/ui/*` requests.
pub const USER_TOKEN_HEADER: &str = "x-anx-user-token";

/// Serves `router` on `addr` until ctrl-c.
pub async fn serve(router: axum::Router, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
