//! Append-only per-card audit log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::lifecycle::LifecycleState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub ts: DateTime<Utc>,
    pub card_key: String,
    pub event: String,
    /// `agent`, `human_ui` or `system`.
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<LifecycleState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<LifecycleState>,
    /// Field nicks, gate ids and the like. Never values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

/// One `{ts, card_key, event, channel}` JSON record per line.
pub fn audit_ndjson(events: &[AuditEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let rec = serde_json::json!({
            "ts": e.ts,
            "card_key": e.card_key,
            "event": e.event,
            "channel": e.channel,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}
