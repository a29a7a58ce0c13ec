//! User tokens: opaque random strings with a server-side session table.

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::engine::TokenCheck;

pub const DEFAULT_TTL_SECS: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserToken {
    pub token: String,
    pub session_id: String,
    pub issued_at: DateTime<Utc>,
    pub ttl: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TokenRecord {
    pub(crate) token: UserToken,
    pub(crate) revoked: bool,
}

#[derive(Debug, Default)]
pub(crate) struct TokenTable {
    pub(crate) by_token: HashMap<String, TokenRecord>,
}

impl TokenTable {
    pub(crate) fn issue(&mut self, session_id: &str, now: DateTime<Utc>, ttl: i64) -> UserToken {
        let token = UserToken {
            token: crate::keys::random_token("ut_"),
            session_id: session_id.to_owned(),
            issued_at: now,
            ttl,
        };
        self.by_token.insert(
            token.token.clone(),
            TokenRecord {
                token: token.clone(),
                revoked: false,
            },
        );
        token
    }

    /// Valid iff issued here, not revoked, and `now - issued_at < ttl`.
    pub(crate) fn verify(&self, token: &str, now: DateTime<Utc>) -> TokenCheck {
        match self.by_token.get(token) {
            Some(r) if !r.revoked && now - r.token.issued_at < Duration::seconds(r.token.ttl) => TokenCheck {
                valid: true,
                session_id: Some(r.token.session_id.clone()),
            },
            _ => TokenCheck::invalid(),
        }
    }

    pub(crate) fn revoke(&mut self, token: &str) -> Option<&TokenRecord> {
        let r = self.by_token.get_mut(token)?;
        r.revoked = true;
        Some(r)
    }
}
