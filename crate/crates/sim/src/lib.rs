//! Agent-side simulator for ANX.
//!
//! [`AgentClient`] speaks only the agent channel: it never holds or sends a
//! User Token, so every `/ui/*` route answers it with 401. A [`Script`] is a
//! JSON list of steps run against a Core (and a Hub, which may be the same
//! server); [`run_script`] returns one [`TranscriptEntry`] per request.
//!
//! String fields in steps may use `$app` (top discovery hit or last fetched
//! manifest) and `$card` (last registered card).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use anx_core::bench::{compare_representations, sample_values, BenchReport};
use anx_core::markup::parse_config;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step {step}: transport failure: {reason}")]
    Transport { step: usize, reason: String },
    #[error("step {step}: expectation failed: {detail}")]
    ExpectFailed { step: usize, detail: String },
    #[error("step {step}: {detail}")]
    Script { step: usize, detail: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid script: {0}")]
    Parse(String),
}

/// An HTTP answer; protocol errors are answers too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// `error.code` of a failed reply.
    pub fn error_code(&self) -> Option<&str> {
        self.body.pointer("/error/code")?.as_str()
    }
}

/// Agent-channel HTTP client.
#[derive(Debug, Clone)]
pub struct AgentClient {
    core: String,
    hub: String,
    agent: ureq::Agent,
}

impl AgentClient {
    pub fn new(core: &str, hub: &str) -> Self {
        Self {
            core: core.trim_end_matches('/').to_owned(),
            hub: hub.trim_end_matches('/').to_owned(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(10)).build(),
        }
    }

    pub fn core_url(&self) -> &str {
        &self.core
    }

    fn send(&self, method: &str, url: &str, body: Option<&Value>) -> Result<Reply, String> {
        let req = self.agent.request(method, url);
        let res = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        let resp = match res {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(e.to_string()),
        };
        let status = resp.status();
        let text = resp.into_string().map_err(|e| e.to_string())?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok(Reply { status, body })
    }

    pub fn core(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Reply, String> {
        self.send(method, &format!("{}{path}", self.core), body)
    }

    pub fn hub(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Reply, String> {
        self.send(method, &format!("{}{path}", self.hub), body)
    }

    pub fn discover(&self, query: &str, k: usize) -> Result<Reply, String> {
        let url = format!("{}/discover", self.hub);
        let resp = self.agent.get(&url).query("q", query).query("k", &k.to_string()).call();
        match resp {
            Ok(r) | Err(ureq::Error::Status(_, r)) => {
                let status = r.status();
                let body = r.into_json().unwrap_or(Value::Null);
                Ok(Reply { status, body })
            }
            Err(e) => Err(e.to_string()),
        }
    }

    /// `anx <card_key> <action> <params>` as one line.
    pub fn cli(&self, line: &str) -> Result<Reply, String> {
        self.core("POST", "/agent/execute", Some(&json!({ "line": line })))
    }

    pub fn execute(&self, card_key: &str, action: &str, params: &str) -> Result<Reply, String> {
        let body = json!({ "card_key": card_key, "action": action, "params": params });
        self.core("POST", "/agent/execute", Some(&body))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ScriptAction {
    Discover {
        query: String,
        #[serde(default = "default_k")]
        k: usize,
    },
    GetManifest {
        app_id: String,
    },
    /// Registers the config of the last manifest, or `config` when given.
    Register {
        #[serde(default)]
        config: Option<Value>,
    },
    GetMarkup {
        #[serde(default)]
        resolve_options: bool,
    },
    Cli {
        line: String,
    },
    /// Plain GET on a Core path.
    Get {
        path: String,
    },
    /// Checks the previous reply: its status and/or the value at a JSON
    /// pointer.
    Expect {
        #[serde(default)]
        status: Option<u16>,
        #[serde(default)]
        pointer: Option<String>,
        #[serde(default)]
        equals: Option<Value>,
    },
    Sleep {
        ms: u64,
    },
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub steps: Vec<ScriptAction>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: usize,
    pub op: String,
    pub request: String,
    pub reply: Reply,
}

#[derive(Debug, Default)]
struct Vars {
    app: Option<String>,
    card: Option<String>,
    manifest: Option<Value>,
}

impl Vars {
    fn subst(&self, s: &str) -> String {
        let mut out = s.to_owned();
        if let Some(a) = &self.app {
            out = out.replace("$app", a);
        }
        if let Some(c) = &self.card {
            out = out.replace("$card", c);
        }
        out
    }
}

fn op_name(a: &ScriptAction) -> &'static str {
    match a {
        ScriptAction::Discover { .. } => "discover",
        ScriptAction::GetManifest { .. } => "get_manifest",
        ScriptAction::Register { .. } => "register",
        ScriptAction::GetMarkup { .. } => "get_markup",
        ScriptAction::Cli { .. } => "cli",
        ScriptAction::Get { .. } => "get",
        ScriptAction::Expect { .. } => "expect",
        ScriptAction::Sleep { .. } => "sleep",
    }
}

/// Runs `script` to the end or to the first transport or expectation
/// failure. Protocol errors are recorded and do not stop the script.
pub fn run_script(client: &AgentClient, script: &Script) -> Result<Vec<TranscriptEntry>, SimError> {
    let mut vars = Vars::default();
    let mut out: Vec<TranscriptEntry> = Vec::new();
    for (step, action) in script.steps.iter().enumerate() {
        let transport = |reason: String| SimError::Transport { step, reason };
        let need = |what: &str| SimError::Script {
            step,
            detail: format!("no {what} yet"),
        };
        let (request, reply) = match action {
            ScriptAction::Discover { query, k } => {
                let q = vars.subst(query);
                let r = client.discover(&q, *k).map_err(transport)?;
                if let Some(top) = r.body.pointer("/entries/0/app_id").and_then(Value::as_str) {
                    vars.app = Some(top.to_owned());
                }
                (format!("GET /discover q={q} k={k}"), r)
            }
            ScriptAction::GetManifest { app_id } => {
                let id = vars.subst(app_id);
                let r = client.hub("GET", &format!("/manifest/{id}"), None).map_err(transport)?;
                if r.ok() {
                    vars.app = Some(id.clone());
                    vars.manifest = Some(r.body.clone());
                }
                (format!("GET /manifest/{id}"), r)
            }
            ScriptAction::Register { config } => {
                let cfg = match config {
                    Some(c) => c.clone(),
                    None => vars
                        .manifest
                        .as_ref()
                        .and_then(|m| m.get("config"))
                        .cloned()
                        .ok_or_else(|| need("manifest"))?,
                };
                let r = client
                    .core("POST", "/agent/cards", Some(&json!({ "config": cfg })))
                    .map_err(transport)?;
                if let Some(k) = r.body.get("card_key").and_then(Value::as_str) {
                    vars.card = Some(k.to_owned());
                }
                ("POST /agent/cards".to_owned(), r)
            }
            ScriptAction::GetMarkup { resolve_options } => {
                let card = vars.card.clone().ok_or_else(|| need("card"))?;
                let path = format!("/agent/cards/{card}/markup?resolve_options={resolve_options}");
                (format!("GET {path}"), client.core("GET", &path, None).map_err(transport)?)
            }
            ScriptAction::Cli { line } => {
                let line = vars.subst(line);
                let r = client.cli(&line).map_err(transport)?;
                (line, r)
            }
            ScriptAction::Get { path } => {
                let path = vars.subst(path);
                (format!("GET {path}"), client.core("GET", &path, None).map_err(transport)?)
            }
            ScriptAction::Expect { status, pointer, equals } => {
                let last = out.last().ok_or_else(|| need("reply"))?;
                let fail = |detail: String| SimError::ExpectFailed { step, detail };
                if let Some(s) = status {
                    if last.reply.status != *s {
                        return Err(fail(format!("status {} != {s}: {}", last.reply.status, last.reply.body)));
                    }
                }
                if let Some(want) = equals {
                    let ptr = pointer.as_deref().unwrap_or("");
                    let got = last.reply.body.pointer(ptr).cloned().unwrap_or(Value::Null);
                    if &got != want {
                        return Err(fail(format!("`{ptr}` is {got}, expected {want}")));
                    }
                }
                continue;
            }
            ScriptAction::Sleep { ms } => {
                std::thread::sleep(Duration::from_millis(*ms));
                continue;
            }
        };
        out.push(TranscriptEntry {
            step,
            op: op_name(action).to_owned(),
            request,
            reply,
        });
    }
    Ok(out)
}

/// Representation-size report for the form config at `path`.
pub fn bench_form(path: &Path, option_counts: &[usize]) -> Result<BenchReport, SimError> {
    let io = |reason: String| SimError::Io {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let form = parse_config(&text).map_err(|e| io(e.to_string()))?;
    let values: BTreeMap<String, String> = sample_values(&form);
    Ok(compare_representations(&form, &values, option_counts))
}
