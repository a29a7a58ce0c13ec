//! Seeded generators shared by property tests and the acceptance run.

use std::collections::{BTreeMap, BTreeSet};

use anx_core::cli::CliCommand;
use anx_core::keys::CardKey;
use anx_core::markup::{AnxConfig, AnxOption, ConfigKind, Dataset, ItemDef, ItemKind, OptionsSet, PROTOCOL};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::Map;

/// Characters for ordinary text, including markup and quoting metacharacters.
pub const PLAIN: &[char] = &[
    'a', 'b', 'q', 'Z', '0', '7', ' ', ' ', '<', '>', '\\', 'x', '/', '"', '\'', '\n', '*', ':', '#', '_', '-', '=',
    'é', '中', '\t', '\r', '[', ']', '(', ')', '▒', '{', '}', ',',
];

/// Characters for secrets. Disjoint from [`PLAIN`] and from everything the
/// renderer emits, so a secret found in output can only have leaked.
pub const SECRET: &[char] = &['α', 'β', 'γ', 'δ', 'ε', 'ζ', 'η', 'θ', 'λ', 'μ', 'π', 'σ', 'ω'];

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn text(r: &mut StdRng, alphabet: &[char], min: usize, max: usize) -> String {
    let n = r.gen_range(min..=max);
    (0..n).map(|_| *alphabet.choose(r).unwrap()).collect()
}

pub fn secret(r: &mut StdRng) -> String {
    text(r, SECRET, 4, 12)
}

pub fn identifier(r: &mut StdRng) -> String {
    const HEAD: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    const TAIL: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
    let mut s = String::new();
    s.push(*HEAD.choose(r).unwrap() as char);
    for _ in 0..r.gen_range(0..8) {
        s.push(*TAIL.choose(r).unwrap() as char);
    }
    s
}

pub fn action(r: &mut StdRng) -> String {
    const HEAD: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    const TAIL: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_";
    let mut s = String::new();
    s.push(*HEAD.choose(r).unwrap() as char);
    for _ in 0..r.gen_range(0..10) {
        s.push(*TAIL.choose(r).unwrap() as char);
    }
    s
}

fn option_value(r: &mut StdRng) -> String {
    if r.gen_bool(0.7) {
        identifier(r).to_lowercase()
    } else {
        text(r, PLAIN, 1, 8)
    }
}

/// A valid form config with 1 to 8 items.
pub fn form(r: &mut StdRng) -> AnxConfig {
    let n = r.gen_range(1..=8);
    let mut nicks = BTreeSet::new();
    let mut items = Vec::new();
    while items.len() < n {
        let nick = identifier(r);
        if !nicks.insert(nick.clone()) {
            continue;
        }
        let kind = *[ItemKind::Input, ItemKind::Input, ItemKind::Textarea, ItemKind::Options, ItemKind::Button]
            .choose(r)
            .unwrap();
        let mut item = ItemDef::new(nick, kind);
        if kind.carries_value() {
            item.sensitive = r.gen_bool(0.35);
            item.required = r.gen_bool(0.3);
        }
        match kind {
            ItemKind::Options => {
                let dataset = if r.gen_bool(0.3) {
                    Dataset::Url(format!("http://localhost:7887/dataset/{}", identifier(r)))
                } else {
                    let mut seen = BTreeSet::new();
                    let mut opts = Vec::new();
                    for _ in 0..r.gen_range(0..5) {
                        let v = option_value(r);
                        if !v.is_empty() && seen.insert(v.clone()) {
                            opts.push(AnxOption::new(v, text(r, PLAIN, 1, 12)));
                        }
                    }
                    Dataset::Inline(opts)
                };
                item.options_set = Some(OptionsSet {
                    dataset,
                    value_nick: "id".into(),
                    title_nick: "name".into(),
                });
            }
            ItemKind::Button => {
                if r.gen_bool(0.8) {
                    item.tap = Some(action(r));
                }
                if r.gen_bool(0.5) {
                    item.label = Some(text(r, PLAIN, 1, 12));
                }
                item.confirm = r.gen_bool(0.3);
            }
            _ => {}
        }
        items.push(item);
    }
    AnxConfig {
        protocol: PROTOCOL.into(),
        version: semver::Version::new(1, r.gen_range(0..3), 0),
        kind: ConfigKind::Form,
        title: text(r, PLAIN, 1, 20),
        description: r.gen_bool(0.5).then(|| text(r, PLAIN, 0, 30)),
        items,
        steps: Vec::new(),
        extensions: Map::new(),
    }
}

/// Values for a subset of the value-carrying items of `config`. Sensitive
/// items get secrets.
pub fn values(r: &mut StdRng, config: &AnxConfig) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for item in config.items.iter().filter(|i| i.kind.carries_value()) {
        if !r.gen_bool(0.75) {
            continue;
        }
        let v = if item.sensitive {
            secret(r)
        } else {
            match item.options_set.as_ref().map(|o| &o.dataset) {
                Some(Dataset::Inline(opts)) if !opts.is_empty() && r.gen_bool(0.8) => {
                    opts.choose(r).unwrap().value.clone()
                }
                _ => text(r, PLAIN, 0, 16),
            }
        };
        out.insert(item.nick.clone(), v);
    }
    out
}

pub fn card_key(r: &mut StdRng) -> CardKey {
    let prefix = ["c", "card", "k"].choose(r).unwrap();
    CardKey::parse(&format!("{prefix}_{}", r.gen_range(0..100_000u32))).unwrap()
}

/// Any params text, including quotes, backslashes and trailing backslashes.
pub fn params(r: &mut StdRng) -> String {
    const P: &[char] = &['{', '}', '"', '\'', '\\', ' ', 'a', 'x', ':', '1', '\n', 'é', '\t'];
    if r.gen_bool(0.15) {
        String::new()
    } else {
        text(r, P, 1, 24)
    }
}

pub fn command(r: &mut StdRng) -> CliCommand {
    CliCommand::new(card_key(r), action(r), params(r)).unwrap()
}
