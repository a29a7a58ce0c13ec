//! Representation-size comparison: ANX markup with url-referenced option
//! sets against an equivalent tool schema with every option inlined.
//!
//! The inlined payload is built mechanically from the same config:
//!
//! * a tool named after the slugged title, described by title and description;
//! * one string property per value-carrying item, titled by its label;
//! * option items list their options as `oneOf: [{const, title}]`, where a
//!   url dataset contributes `n` synthetic options (none when `n = 0`);
//! * `required` lists required items; buttons become the tool itself;
//! * followed by the tool call `{"name", "arguments"}` carrying `values`.
//!
//! The ANX side is the agent-channel markup (options by reference) followed
//! by the one `set_form` command line that carries the same values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cli::{format_command, CliCommand};
use crate::keys::CardKey;
use crate::markup::{measure_size, render_markup, AnxConfig, AnxOption, Dataset, ItemKind, ResolvedOptions, SizeMeasure, ViewerRole};

const CARD_KEY: &str = "c_1";

/// Published task-incremental token figures, printed as context only.
pub const REFERENCE_FIGURES: &[ReferenceFigure] = &[
    ReferenceFigure { model: "Qwen3.5-plus", method: "GUI", task_inc_k: 9.1 },
    ReferenceFigure { model: "Qwen3.5-plus", method: "MCP-based Skill", task_inc_k: 7.4 },
    ReferenceFigure { model: "Qwen3.5-plus", method: "ANX", task_inc_k: 3.9 },
    ReferenceFigure { model: "GPT-4o", method: "GUI", task_inc_k: 8.3 },
    ReferenceFigure { model: "GPT-4o", method: "MCP-based Skill", task_inc_k: 6.3 },
    ReferenceFigure { model: "GPT-4o", method: "ANX", task_inc_k: 2.8 },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceFigure {
    pub model: &'static str,
    pub method: &'static str,
    /// Thousands of tokens above the 13.2k prompt baseline.
    pub task_inc_k: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationSize {
    pub name: String,
    pub bytes: usize,
    pub approx_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Options per url dataset.
    pub option_count: usize,
    pub anx: RepresentationSize,
    pub inlined: RepresentationSize,
    /// `(inlined - anx) / inlined` over approx tokens.
    pub token_reduction: f64,
    /// `(inlined - anx) / inlined` over bytes.
    pub byte_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub form: String,
    /// Tokens spent before the task starts. Nothing here corresponds to
    /// the published 13.2k prompt baseline, so it is reported as zero.
    pub baseline_tokens: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Human-readable table followed by the non-reproduced published figures.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "form: {}\nbaseline tokens: {} (no analog of the published 13.2k prompt baseline)\n\n",
            self.form, self.baseline_tokens
        );
        s.push_str("options  anx_bytes  anx_tokens  inlined_bytes  inlined_tokens  token_reduction\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:>7}  {:>9}  {:>10}  {:>13}  {:>14}  {:>14.1}%\n",
                r.option_count,
                r.anx.bytes,
                r.anx.approx_tokens,
                r.inlined.bytes,
                r.inlined.approx_tokens,
                r.token_reduction * 100.0
            ));
        }
        s.push_str("\npublished task-incremental tokens (LLM runs, not reproduced here):\n");
        for f in REFERENCE_FIGURES {
            s.push_str(&format!("  {:<13} {:<16} {:.1}k\n", f.model, f.method, f.task_inc_k));
        }
        s
    }
}

/// The `n` options a url dataset of `nick` stands for.
pub fn synthetic_options(nick: &str, n: usize) -> Vec<AnxOption> {
    (1..=n)
        .map(|i| AnxOption::new(format!("{nick}_{i}"), format!("{nick} option {i}")))
        .collect()
}

fn slug(title: &str) -> String {
    let mut out = String::new();
    for w in title.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push('_');
        }
        out.push_str(&w.to_ascii_lowercase());
    }
    out
}

/// ANX representation: agent markup plus the `set_form` line.
pub fn anx_representation(form: &AnxConfig, values: &BTreeMap<String, String>) -> String {
    let mut markup = render_markup(form, &BTreeMap::new(), CARD_KEY, ViewerRole::Agent, &ResolvedOptions::new())
        .expect("form renders");
    let params = serde_json::to_string(values).expect("values serialize");
    let cmd = CliCommand::new(CardKey::parse(CARD_KEY).expect("valid key"), "set_form", params)
        .expect("valid command");
    markup.push('\n');
    markup.push_str(&format_command(&cmd));
    markup
}

/// Inlined representation: tool schema with every option, plus the call.
pub fn inlined_representation(form: &AnxConfig, values: &BTreeMap<String, String>, n: usize) -> String {
    let mut props = Map::new();
    let mut required = Vec::new();
    for item in form.items.iter().filter(|i| i.kind.carries_value()) {
        let mut p = Map::new();
        p.insert("type".into(), json!("string"));
        p.insert("title".into(), json!(item.label.clone().unwrap_or_else(|| item.nick.clone())));
        if item.kind == ItemKind::Options {
            let options = match item.options_set.as_ref().map(|o| &o.dataset) {
                Some(Dataset::Inline(opts)) => opts.clone(),
                Some(Dataset::Url(_)) => synthetic_options(&item.nick, n),
                None => Vec::new(),
            };
            if !options.is_empty() {
                let one_of: Vec<Value> = options
                    .iter()
                    .map(|o| json!({ "const": o.value, "title": o.title }))
                    .collect();
                p.insert("oneOf".into(), Value::Array(one_of));
            }
        }
        if item.required {
            required.push(json!(item.nick));
        }
        props.insert(item.nick.clone(), Value::Object(p));
    }
    let name = slug(&form.title);
    let description = match &form.description {
        Some(d) => format!("{}. {}", form.title, d),
        None => form.title.clone(),
    };
    let schema = json!({
        "name": name,
        "description": description,
        "inputSchema": { "type": "object", "properties": props, "required": required },
    });
    let call = json!({ "name": name, "arguments": values });
    format!("{schema}\n{call}")
}

fn size(name: &str, text: &str) -> RepresentationSize {
    let SizeMeasure { bytes, approx_tokens } = measure_size(text);
    RepresentationSize {
        name: name.to_owned(),
        bytes,
        approx_tokens,
    }
}

fn reduction(base: usize, anx: usize) -> f64 {
    if base == 0 {
        0.0
    } else {
        (base as f64 - anx as f64) / base as f64
    }
}

/// Sizes both representations of `form` for each option count.
pub fn compare_representations(form: &AnxConfig, values: &BTreeMap<String, String>, option_counts: &[usize]) -> BenchReport {
    let anx_text = anx_representation(form, values);
    let rows = option_counts
        .iter()
        .map(|&n| {
            let anx = size("anx_markup_url_ref", &anx_text);
            let inlined = size("inlined_options_schema", &inlined_representation(form, values, n));
            BenchRow {
                option_count: n,
                token_reduction: reduction(inlined.approx_tokens, anx.approx_tokens),
                byte_reduction: reduction(inlined.bytes, anx.bytes),
                anx,
                inlined,
            }
        })
        .collect();
    BenchReport {
        form: form.title.clone(),
        baseline_tokens: 0,
        rows,
    }
}

/// Plausible values for every value-carrying item; url options take the
/// first synthetic option.
pub fn sample_values(form: &AnxConfig) -> BTreeMap<String, String> {
    form.items
        .iter()
        .filter(|i| i.kind.carries_value())
        .map(|i| {
            let v = match i.options_set.as_ref().map(|o| &o.dataset) {
                Some(Dataset::Inline(opts)) => opts.first().map(|o| o.value.clone()).unwrap_or_default(),
                Some(Dataset::Url(_)) => format!("{}_1", i.nick),
                None => format!("sample {}", i.nick),
            };
            (i.nick.clone(), v)
        })
        .collect()
}
