#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use anx_core::clock::ManualClock;
use anx_core::engine::{Channel, ChannelIdentity};
use anx_core::markup::{parse_config, AnxConfig};
use anx_core::runtime::Runtime;
use anx_core::sop::ReferenceProvider;
use serde_json::json;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn config(name: &str) -> AnxConfig {
    parse_config(&fixture(name)).unwrap()
}

/// Reference provider for the case-study SOP with a fixed matching score.
pub fn screening_provider(score: f64) -> ReferenceProvider {
    ReferenceProvider::new()
        .with_outputs("s1", json!({ "score": score }))
        .with_outputs("s2", json!({ "analysis": format!("candidate scored {score}") }))
}

pub fn screening_runtime(score: f64) -> Runtime {
    let rt = Runtime::in_memory(Arc::new(ManualClock::default()));
    rt.set_fallback_provider(Arc::new(screening_provider(score)));
    rt
}

pub fn human(rt: &Runtime) -> ChannelIdentity {
    let tok = rt.hub().issue_user_token("session-1", Channel::HumanUi).unwrap();
    ChannelIdentity::human(tok.token)
}
pub mod gen;
pub mod checks;
