//! `anx-sim run <script>` replays an agent script; `anx-sim bench` prints
//! the representation-size comparison for a form.

use std::path::PathBuf;
use std::process::ExitCode;

use anx_sim::{bench_form, run_script, AgentClient, Script, SimError};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "anx-sim", version, about = "ANX agent simulator")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a JSON script and print its transcript.
    Run {
        script: PathBuf,
        #[arg(long, env = "ANX_CORE_URL", default_value = "http://127.0.0.1:7800")]
        core: String,
        #[arg(long, env = "ANX_HUB_URL")]
        hub: Option<String>,
    },
    /// Compare url-referenced markup with an inlined-options schema.
    Bench {
        #[arg(long)]
        form: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,2,50,200")]
        options: Vec<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(e: &SimError) -> u8 {
    match e {
        SimError::Transport { .. } => 3,
        SimError::ExpectFailed { .. } => 2,
        _ => 1,
    }
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
    let res = match args.cmd {
        Cmd::Run { script, core, hub } => Script::load(&script).and_then(|s| {
            let hub = hub.unwrap_or_else(|| core.clone());
            let t = run_script(&AgentClient::new(&core, &hub), &s)?;
            Ok(serde_json::to_string_pretty(&t).expect("json"))
        }),
        Cmd::Bench { form, options, out, json } => bench_form(&form, &options).and_then(|r| {
            let text = if json { serde_json::to_string_pretty(&r).expect("json") } else { r.to_text() };
            match out {
                Some(p) => std::fs::write(&p, text)
                    .map(|_| format!("wrote {}", p.display()))
                    .map_err(|e| SimError::Io {
                        path: p.display().to_string(),
                        reason: e.to_string(),
                    }),
                None => Ok(text),
            }
        }),
    };
    match res {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("anx-sim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
