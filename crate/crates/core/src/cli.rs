//! The `anx <cardKey> <action> params` command carrier.
//!
//! Quoting rule: outside single quotes, whitespace separates tokens and every
//! other character is literal. A `'` opens a quoted run that extends to the
//! next unescaped `'`; inside it `\'` stands for `'`, `\\` for `\`, and any
//! other backslash is literal. Everything after the action is the params
//! payload; when it spans several tokens they are joined by one space.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keys::{is_action, is_key, CardKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CliError {
    #[error("not an anx command (expected leading `anx`)")]
    NotAnxCommand,
    #[error("missing {0}")]
    MissingField(&'static str),
    #[error("unterminated quote starting at byte {0}")]
    UnterminatedQuote(usize),
    #[error("invalid card key `{0}`")]
    InvalidCardKey(String),
    #[error("invalid action `{0}`")]
    InvalidAction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CliCommand {
    pub card_key: CardKey,
    pub action: String,
    /// Raw payload, usually JSON text; empty when absent.
    #[serde(default)]
    pub params: String,
}

impl CliCommand {
    pub fn new(card_key: CardKey, action: impl Into<String>, params: impl Into<String>) -> Result<Self, CliError> {
        let action = action.into();
        if !is_action(&action) {
            return Err(CliError::InvalidAction(action));
        }
        Ok(Self {
            card_key,
            action,
            params: params.into(),
        })
    }

    /// Params parsed as JSON; empty params read as `null`.
    pub fn params_json(&self) -> Result<serde_json::Value, serde_json::Error> {
        if self.params.trim().is_empty() {
            Ok(serde_json::Value::Null)
        } else {
            serde_json::from_str(&self.params)
        }
    }
}

impl fmt::Display for CliCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_command(self))
    }
}

fn tokenize(line: &str) -> Result<Vec<String>, CliError> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = line.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '\'' => {
                in_token = true;
                loop {
                    match chars.next() {
                        None => return Err(CliError::UnterminatedQuote(i)),
                        Some((_, '\'')) => break,
                        Some((_, '\\')) => match chars.peek() {
                            Some(&(_, e @ ('\'' | '\\'))) => {
                                cur.push(e);
                                chars.next();
                            }
                            _ => cur.push('\\'),
                        },
                        Some((_, other)) => cur.push(other),
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_token {
                    tokens.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                in_token = true;
                cur.push(c);
            }
        }
    }
    if in_token {
        tokens.push(cur);
    }
    Ok(tokens)
}

pub fn parse_command(line: &str) -> Result<CliCommand, CliError> {
    let tokens = tokenize(line)?;
    let mut it = tokens.into_iter();
    match it.next() {
        Some(t) if t == "anx" => {}
        _ => return Err(CliError::NotAnxCommand),
    }
    let key = it.next().ok_or(CliError::MissingField("cardKey"))?;
    let action = it.next().ok_or(CliError::MissingField("action"))?;
    if !is_key(&key) {
        return Err(CliError::InvalidCardKey(key));
    }
    let card_key = CardKey::parse(&key).ok_or(CliError::InvalidCardKey(key))?;
    let params = it.collect::<Vec<_>>().join(" ");
    CliCommand::new(card_key, action, params)
}

fn quote(params: &str) -> String {
    let mut out = String::with_capacity(params.len() + 2);
    out.push('\'');
    let mut chars = params.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' if matches!(chars.peek(), None | Some('\'' | '\\')) => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Canonical line: params single-quoted iff non-empty.
pub fn format_command(cmd: &CliCommand) -> String {
    let mut out = format!("anx {} {}", cmd.card_key, cmd.action);
    if !cmd.params.is_empty() {
        out.push(' ');
        out.push_str(&quote(&cmd.params));
    }
    out
}

/// `format_command(parse_command(line))`.
pub fn canonicalize(line: &str) -> Result<String, CliError> {
    parse_command(line).map(|c| format_command(&c))
}
