//! Identifier newtypes shared across the protocol.
//!
//! Card keys and item keys share one keyspace: any token of the form
//! `[a-z]+_[0-9]+` (so `c_8193` and `card_1675` are both keys).

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Returns true when `s` matches `[a-z]+_[0-9]+`.
pub fn is_key(s: &str) -> bool {
    let Some((prefix, digits)) = s.split_once('_') else {
        return false;
    };
    !prefix.is_empty()
        && prefix.bytes().all(|b| b.is_ascii_lowercase())
        && !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Returns true when `s` matches `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Returns true when `s` matches `[a-z][a-z0-9_]*`.
pub fn is_action(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Key of a registered card instance, e.g. `c_8193`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CardKey(String);

impl CardKey {
    pub fn parse(s: &str) -> Option<Self> {
        is_key(s).then(|| Self(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Draws a fresh `c_NNNN` key. `width` is the number of digits (at least 4).
    pub(crate) fn random(rng: &mut impl Rng, width: u32) -> Self {
        let width = width.max(4);
        let lo = 10u64.pow(width - 1);
        let hi = 10u64.pow(width);
        Self(format!("c_{}", rng.gen_range(lo..hi)))
    }
}

impl fmt::Display for CardKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CardKey {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if is_key(&s) {
            Ok(Self(s))
        } else {
            Err(format!("invalid key `{s}`"))
        }
    }
}

impl From<CardKey> for String {
    fn from(k: CardKey) -> Self {
        k.0
    }
}

impl AsRef<str> for CardKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// 128 random bits rendered as 32 lowercase hex chars, prefixed.
pub(crate) fn random_token(prefix: &str) -> String {
    let bytes: [u8; 16] = rand::rngs::OsRng.gen();
    format!("{prefix}{}", hex::encode(bytes))
}
