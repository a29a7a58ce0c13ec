//! Sensitive values supplied over the UI channel.

use std::collections::BTreeMap;
use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, OsRng};
use chacha20poly1305::{AeadCore, ChaCha20Poly1305, Key, Nonce};
use serde::{Deserialize, Serialize};

/// A secret string. Deliberately not `Serialize`; `Debug` prints nothing of it.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<hidden>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensitiveEntry {
    pub nick: String,
    pub value: Secret,
    /// `ref_` + 32 hex chars, unrelated to the value.
    pub ref_token: String,
}

/// Per-card vault: at most one live entry per nick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vault {
    entries: BTreeMap<String, SensitiveEntry>,
}

impl Vault {
    pub fn put(&mut self, nick: &str, value: Secret) -> String {
        let ref_token = crate::keys::random_token("ref_");
        self.entries.insert(
            nick.to_owned(),
            SensitiveEntry {
                nick: nick.to_owned(),
                value,
                ref_token: ref_token.clone(),
            },
        );
        ref_token
    }

    pub fn get(&self, nick: &str) -> Option<&SensitiveEntry> {
        self.entries.get(nick)
    }

    pub fn contains(&self, nick: &str) -> bool {
        self.entries.contains_key(nick)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &SensitiveEntry> {
        self.entries.values()
    }

    /// Secrets by nick, for the action handler that consumes them.
    pub(crate) fn secrets(&self) -> BTreeMap<String, Secret> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }

    fn to_plain(&self) -> Vec<PlainEntry> {
        self.entries
            .values()
            .map(|e| PlainEntry {
                nick: e.nick.clone(),
                value: e.value.0.clone(),
                ref_token: e.ref_token.clone(),
            })
            .collect()
    }

    fn from_plain(entries: Vec<PlainEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|p| {
                    (
                        p.nick.clone(),
                        SensitiveEntry {
                            nick: p.nick,
                            value: Secret(p.value),
                            ref_token: p.ref_token,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PlainEntry {
    nick: String,
    value: String,
    ref_token: String,
}

/// Seals vault contents for storage at rest.
#[derive(Clone)]
pub struct VaultCipher {
    cipher: ChaCha20Poly1305,
}

impl fmt::Debug for VaultCipher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("VaultCipher")
    }
}

impl VaultCipher {
    pub fn new(key: &[u8; 32]) -> Self {
        Self {
            cipher: ChaCha20Poly1305::new(Key::from_slice(key)),
        }
    }

    /// A cipher with a fresh random key, for stores that do not outlive the process.
    pub fn ephemeral() -> Self {
        let key = ChaCha20Poly1305::generate_key(&mut OsRng);
        Self {
            cipher: ChaCha20Poly1305::new(&key),
        }
    }

    pub fn generate_key() -> [u8; 32] {
        ChaCha20Poly1305::generate_key(&mut OsRng).into()
    }

    /// nonce (12 bytes) || ciphertext.
    pub fn seal(&self, vault: &Vault) -> Vec<u8> {
        let plain = serde_json::to_vec(&vault.to_plain()).expect("vault entries serialize");
        let nonce = ChaCha20Poly1305::generate_nonce(&mut OsRng);
        let mut out = nonce.to_vec();
        out.extend(
            self.cipher
                .encrypt(&nonce, plain.as_slice())
                .expect("in-memory encryption does not fail"),
        );
        out
    }

    pub fn open(&self, sealed: &[u8]) -> Result<Vault, String> {
        if sealed.len() < 12 {
            return Err("sealed vault too short".into());
        }
        let (nonce, ct) = sealed.split_at(12);
        let plain = self
            .cipher
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| "vault decryption failed (wrong key?)".to_owned())?;
        let entries: Vec<PlainEntry> = serde_json::from_slice(&plain).map_err(|e| e.to_string())?;
        Ok(Vault::from_plain(entries))
    }
}
