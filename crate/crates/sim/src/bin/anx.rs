//! Agent-side command line: `anx <card_key> <action> [params]`.
//!
//! Exit codes: 0 success, 1 usage, 2 protocol error, 3 transport error.

use std::process::ExitCode;

use anx_sim::{AgentClient, Reply};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "anx", version, about = "Drive ANX cards over the agent channel")]
struct Args {
    /// Core base URL.
    #[arg(long, env = "ANX_CORE_URL", default_value = "http://127.0.0.1:7800")]
    core: String,
    /// Hub base URL; defaults to the Core URL.
    #[arg(long, env = "ANX_HUB_URL")]
    hub: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Search the Hub catalog.
    Discover {
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
    /// Fetch an app manifest from the Hub.
    Manifest { app_id: String },
    /// Register a card from a config file.
    Register { file: std::path::PathBuf },
    /// Print a card's agent markup.
    Markup {
        card_key: String,
        #[arg(long)]
        resolve_options: bool,
    },
    /// Print a card's agent state.
    State { card_key: String },
    /// `<card_key> <action> [params]`
    #[command(external_subcommand)]
    Exec(Vec<String>),
}

fn run(args: Args) -> Result<Reply, (u8, String)> {
    let hub = args.hub.clone().unwrap_or_else(|| args.core.clone());
    let c = AgentClient::new(&args.core, &hub);
    let res = match args.cmd {
        Cmd::Discover { query, k } => c.discover(&query, k),
        Cmd::Manifest { app_id } => c.hub("GET", &format!("/manifest/{app_id}"), None),
        Cmd::Register { file } => {
            let text = std::fs::read_to_string(&file).map_err(|e| (1, format!("{}: {e}", file.display())))?;
            let cfg: serde_json::Value = serde_json::from_str(&text).map_err(|e| (1, format!("{}: {e}", file.display())))?;
            c.core("POST", "/agent/cards", Some(&json!({ "config": cfg })))
        }
        Cmd::Markup { card_key, resolve_options } => c.core(
            "GET",
            &format!("/agent/cards/{card_key}/markup?resolve_options={resolve_options}"),
            None,
        ),
        Cmd::State { card_key } => c.core("GET", &format!("/agent/cards/{card_key}/state"), None),
        Cmd::Exec(words) => match words.as_slice() {
            [key, action, rest @ ..] => c.execute(key, action, &rest.join(" ")),
            _ => return Err((1, "usage: anx <card_key> <action> [params]".into())),
        },
    };
    res.map_err(|e| (3, e))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(r) if r.ok() => {
            println!("{}", serde_json::to_string_pretty(&r.body).expect("json"));
            ExitCode::SUCCESS
        }
        Ok(r) => {
            eprintln!("{} {}", r.status, r.body);
            ExitCode::from(2)
        }
        Err((code, msg)) => {
            eprintln!("anx: {msg}");
            ExitCode::from(code)
        }
    }
}
