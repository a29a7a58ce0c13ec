use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use thiserror::Error;

use anx_core::engine::{Engine, EngineConfig, TokenVerifier, VaultCipher};
use anx_core::hub::Hub;
use anx_core::runtime::Runtime;
use anx_core::clock::SystemClock;
use anx_core::sop::ReferenceProvider;
use anx_core::store::{MemoryStore, RedbStore, Store};

use crate::core_api::{core_router, CoreState};
use crate::hub_api::hub_router;
use crate::verify::RemoteVerifier;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("ANX_VAULT_KEY must be 64 hex characters")]
    BadVaultKey,
    #[error("ANX_VAULT_KEY is required when ANX_DATA_DIR is set")]
    MissingVaultKey,
    #[error("cannot open {path}: {reason}")]
    Store { path: String, reason: String },
    #[error("{0}")]
    Load(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreSettings {
    pub listen: String,
    /// Remote Hub for token checks. Without it the Hub runs in-process and
    /// its routes are served on the same listener.
    pub hub_url: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub vault_key: Option<String>,
}

impl CoreSettings {
    /// `ANX_CORE_LISTEN`, `ANX_HUB_URL`, `ANX_DATA_DIR`, `ANX_VAULT_KEY`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            listen: var("ANX_CORE_LISTEN").unwrap_or_else(|| "127.0.0.1:7800".into()),
            hub_url: var("ANX_HUB_URL"),
            data_dir: var("ANX_DATA_DIR").map(PathBuf::from),
            vault_key: var("ANX_VAULT_KEY"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HubSettings {
    pub listen: String,
    pub data_dir: Option<PathBuf>,
}

impl HubSettings {
    /// `ANX_HUB_LISTEN`, `ANX_HUB_DATA_DIR`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            listen: var("ANX_HUB_LISTEN").unwrap_or_else(|| "127.0.0.1:7801".into()),
            data_dir: var("ANX_HUB_DATA_DIR").map(PathBuf::from),
        }
    }
}

fn open_store(dir: &Option<PathBuf>, file: &str) -> Result<Arc<dyn Store>, SettingsError> {
    match dir {
        None => Ok(Arc::new(MemoryStore::new())),
        Some(d) => {
            let path = d.join(file);
            let err = |e: String| SettingsError::Store {
                path: path.display().to_string(),
                reason: e,
            };
            std::fs::create_dir_all(d).map_err(|e| err(e.to_string()))?;
            Ok(Arc::new(RedbStore::open(&path).map_err(|e| err(e.to_string()))?))
        }
    }
}

fn cipher(s: &CoreSettings) -> Result<VaultCipher, SettingsError> {
    match (&s.vault_key, &s.data_dir) {
        (Some(k), _) => {
            let bytes: [u8; 32] = hex::decode(k.trim())
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or(SettingsError::BadVaultKey)?;
            Ok(VaultCipher::new(&bytes))
        }
        (None, Some(_)) => Err(SettingsError::MissingVaultKey),
        (None, None) => Ok(VaultCipher::ephemeral()),
    }
}

/// Core router and runtime. The SOP runtime keeps its assignment log in a
/// Hub instance stored beside the Core data, even when tokens are checked
/// remotely.
pub fn build_core(s: &CoreSettings) -> Result<(Router, Arc<Runtime>), SettingsError> {
    let store = open_store(&s.data_dir, "core.redb")?;
    let clock = Arc::new(SystemClock);
    let hub = Arc::new(Hub::new(clock.clone(), store.clone()).map_err(|e| SettingsError::Load(e.to_string()))?);
    let verifier: Arc<dyn TokenVerifier> = match &s.hub_url {
        Some(url) => Arc::new(RemoteVerifier::new(url.clone())),
        None => hub.clone(),
    };
    let engine = Arc::new(
        Engine::new(
            EngineConfig::default()
                .with_clock(clock)
                .with_verifier(verifier)
                .with_store(store.clone(), cipher(s)?),
        )
        .map_err(|e| SettingsError::Load(e.to_string()))?,
    );
    let runtime = Arc::new(Runtime::new(engine, hub.clone(), store).map_err(|e| SettingsError::Load(e.to_string()))?);
    runtime.set_fallback_provider(Arc::new(ReferenceProvider::new()));
    let mut router = core_router(CoreState::new(runtime.clone()));
    if s.hub_url.is_none() {
        router = router.merge(hub_router(hub));
    }
    Ok((router, runtime))
}

pub fn build_hub(s: &HubSettings) -> Result<(Router, Arc<Hub>), SettingsError> {
    let store = open_store(&s.data_dir, "hub.redb")?;
    let hub = Arc::new(Hub::new(Arc::new(SystemClock), store).map_err(|e| SettingsError::Load(e.to_string()))?);
    Ok((hub_router(hub.clone()), hub))
}
