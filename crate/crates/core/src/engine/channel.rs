//! Who is talking to Core, and how human-channel tokens are checked.

use serde::{Deserialize, Serialize};

/// Request channel without credentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Agent,
    HumanUi,
}

/// The channel a request arrived on. Agents never carry a user token.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum ChannelIdentity {
    Agent,
    HumanUi { user_token: String },
}

impl ChannelIdentity {
    pub fn human(token: impl Into<String>) -> Self {
        Self::HumanUi {
            user_token: token.into(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Agent => "agent",
            Self::HumanUi { .. } => "human_ui",
        }
    }

    pub fn channel(&self) -> Channel {
        match self {
            Self::Agent => Channel::Agent,
            Self::HumanUi { .. } => Channel::HumanUi,
        }
    }

    pub fn is_agent(&self) -> bool {
        matches!(self, Self::Agent)
    }
}

impl std::fmt::Debug for ChannelIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Agent => f.write_str("Agent"),
            Self::HumanUi { .. } => f.write_str("HumanUi { user_token: <hidden> }"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCheck {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl TokenCheck {
    pub fn invalid() -> Self {
        Self {
            valid: false,
            session_id: None,
        }
    }
}

/// Verifies Hub-issued user tokens.
pub trait TokenVerifier: Send + Sync {
    fn verify(&self, token: &str) -> Result<TokenCheck, String>;
}

/// Rejects every token. Useful where no Hub is configured.
#[derive(Debug, Default, Clone, Copy)]
pub struct DenyAll;

impl TokenVerifier for DenyAll {
    fn verify(&self, _token: &str) -> Result<TokenCheck, String> {
        Ok(TokenCheck::invalid())
    }
}

impl<T: TokenVerifier + ?Sized> TokenVerifier for std::sync::Arc<T> {
    fn verify(&self, token: &str) -> Result<TokenCheck, String> {
        (**self).verify(token)
    }
}
