use std::time::Duration;

use anx_core::engine::{TokenCheck, TokenVerifier};
use serde_json::json;

/// Verifies User Tokens against a Hub's `/verify` route.
#[derive(Debug, Clone)]
pub struct RemoteVerifier {
    hub_url: String,
    agent: ureq::Agent,
}

impl RemoteVerifier {
    pub fn new(hub_url: impl Into<String>) -> Self {
        Self {
            hub_url: hub_url.into().trim_end_matches('/').to_owned(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(5)).build(),
        }
    }
}

impl TokenVerifier for RemoteVerifier {
    fn verify(&self, token: &str) -> Result<TokenCheck, String> {
        let resp = self
            .agent
            .post(&format!("{}/verify", self.hub_url))
            .send_json(json!({ "token": token }))
            .map_err(|e| e.to_string())?;
        resp.into_json::<TokenCheck>().map_err(|e| e.to_string())
    }
}
