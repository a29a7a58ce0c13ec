use std::process::ExitCode;

use anx_server::{build_core, serve, CoreSettings};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let settings = CoreSettings::from_env();
    let (router, _) = match build_core(&settings) {
        Ok(r) => r,
        Err(e) => {
            tracing::error!("{e}");
            return ExitCode::FAILURE;
        }
    };
    match &settings.hub_url {
        Some(url) => tracing::info!(hub = %url, "verifying user tokens remotely"),
        None => tracing::info!("hub routes served in-process"),
    }
    if let Err(e) = serve(router, &settings.listen).await {
        tracing::error!("{e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
