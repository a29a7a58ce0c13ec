//! Config → markup rendering.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::config::{AnxConfig, AnxOption, ConfigKind, Dataset, ItemDef, ItemKind};
use super::doc::{AnxMarkupDoc, Attr, Element, MarkupNode, TagKind, MASK};
use crate::keys::is_key;
use crate::sop::StepDef;

/// Who will read the rendered markup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewerRole {
    Agent,
    HumanUi,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("no item with nick `{0}`")]
    UnknownNick(String),
    #[error("invalid card key `{0}`")]
    BadCardKey(String),
}

/// Options already fetched for url-backed datasets, keyed by item nick.
/// Url-backed items missing from the map are rendered by reference.
pub type ResolvedOptions = BTreeMap<String, Vec<AnxOption>>;

/// Renders canonical markup for `config` with the given field values.
pub fn render_markup(
    config: &AnxConfig,
    values: &BTreeMap<String, String>,
    card_key: &str,
    viewer: ViewerRole,
    resolved: &ResolvedOptions,
) -> Result<String, RenderError> {
    render_doc(config, values, card_key, viewer, resolved).map(|d| d.serialize())
}

pub fn render_doc(
    config: &AnxConfig,
    values: &BTreeMap<String, String>,
    card_key: &str,
    viewer: ViewerRole,
    resolved: &ResolvedOptions,
) -> Result<AnxMarkupDoc, RenderError> {
    if !is_key(card_key) {
        return Err(RenderError::BadCardKey(card_key.to_owned()));
    }
    for nick in values.keys() {
        match config.item(nick) {
            Some(item) if item.kind.carries_value() => {}
            _ => return Err(RenderError::UnknownNick(nick.clone())),
        }
    }

    let mut keys = ItemKeys::new(card_key);
    let mut root = Element::new(match config.kind {
        ConfigKind::Form => TagKind::Form,
        ConfigKind::Sop => TagKind::Sop,
    });
    root.attrs.push(Attr::Positional(card_key.to_owned()));
    let mut header = format!("## {}", config.title);
    if let Some(d) = &config.description {
        header.push('\n');
        header.push_str(d);
    }
    root.children.push(MarkupNode::Text(header));

    match config.kind {
        ConfigKind::Form => {
            let ctx = ItemCtx {
                values,
                viewer,
                resolved,
            };
            for item in &config.items {
                root.children
                    .push(MarkupNode::Element(ctx.item(item, keys.next(&item.nick))));
            }
            if !config.items.iter().any(|i| i.kind == ItemKind::Button) {
                let mut submit = ItemDef::new("submit", ItemKind::Button);
                submit.tap = Some("submit".into());
                root.children
                    .push(MarkupNode::Element(ctx.item(&submit, keys.next("submit"))));
            }
        }
        ConfigKind::Sop => {
            let empty = BTreeMap::new();
            let ctx = ItemCtx {
                values: &empty,
                viewer,
                resolved,
            };
            for step in &config.steps {
                root.children
                    .push(MarkupNode::Element(step_element(step, &ctx, &mut keys)));
            }
        }
    }
    Ok(AnxMarkupDoc { root })
}

struct ItemCtx<'a> {
    values: &'a BTreeMap<String, String>,
    viewer: ViewerRole,
    resolved: &'a ResolvedOptions,
}

impl ItemCtx<'_> {
    /// Shown value, masked for agents when the item is sensitive.
    fn display(&self, item: &ItemDef) -> Option<(String, &str)> {
        let raw = self.values.get(&item.nick).filter(|v| !v.is_empty())?;
        let shown = if item.sensitive && self.viewer == ViewerRole::Agent {
            MASK
        } else {
            raw.as_str()
        };
        Some((raw.clone(), shown))
    }

    fn item(&self, item: &ItemDef, key: String) -> Element {
        let mut el = Element::new(match item.kind {
            ItemKind::Input => TagKind::Input,
            ItemKind::Textarea => TagKind::Textarea,
            ItemKind::Options => TagKind::Options,
            ItemKind::Button => TagKind::Button,
        });
        el.attrs.push(Attr::Positional(key));
        if item.sensitive {
            el.attrs.push(Attr::named("sensitive", "true"));
        }
        if item.required {
            el.attrs.push(Attr::named("required", "true"));
        }
        let label = format!("**{}:**", item.nick);
        match item.kind {
            ItemKind::Input => match self.display(item) {
                Some((raw, shown)) if raw.contains('\n') => {
                    el.children
                        .push(MarkupNode::Text(format!("{label}\n{shown}")));
                }
                Some((_, shown)) => {
                    el.inline = true;
                    el.children.push(MarkupNode::Text(format!("{label} {shown}")));
                }
                None => {
                    el.inline = true;
                    el.children.push(MarkupNode::Text(label));
                }
            },
            ItemKind::Textarea => {
                let text = match self.display(item) {
                    Some((_, shown)) => format!("{label}\n{shown}"),
                    None => label,
                };
                el.children.push(MarkupNode::Text(text));
            }
            ItemKind::Options => {
                let text = match self.display(item) {
                    Some((_, shown)) => format!("{label} {shown}"),
                    None => label,
                };
                el.children.push(MarkupNode::Text(text));
                let mut placeholder = Element::new(TagKind::Option(0));
                placeholder.inline = true;
                placeholder
                    .children
                    .push(MarkupNode::Text(format!(" Please select {}", item.nick)));
                let options: Option<&[AnxOption]> = match item.options_set.as_ref().map(|o| &o.dataset) {
                    Some(Dataset::Inline(opts)) => Some(opts),
                    Some(Dataset::Url(url)) => match self.resolved.get(&item.nick) {
                        Some(opts) => Some(opts),
                        None => {
                            el.attrs.push(Attr::named("src", url.clone()));
                            None
                        }
                    },
                    None => None,
                };
                el.children.push(MarkupNode::Element(placeholder));
                for (i, opt) in options.unwrap_or_default().iter().enumerate() {
                    let mut o = Element::new(TagKind::Option(i as u32 + 1));
                    o.inline = true;
                    o.attrs.push(Attr::Positional(opt.value.clone()));
                    o.children.push(MarkupNode::Text(format!(" {}", opt.title)));
                    el.children.push(MarkupNode::Element(o));
                }
            }
            ItemKind::Button => {
                if let Some(tap) = &item.tap {
                    el.attrs.push(Attr::named("tap", tap.clone()));
                }
                if item.confirm {
                    el.attrs.push(Attr::named("confirm", "true"));
                }
                let text_label = item.label.clone().unwrap_or_else(|| item.nick.clone());
                let text = match &item.tap {
                    Some(tap) => format!("[{text_label}](/{tap})"),
                    None => format!("[{text_label}]"),
                };
                el.children.push(MarkupNode::Text(text));
            }
        }
        el
    }
}

fn step_element(step: &StepDef, ctx: &ItemCtx<'_>, keys: &mut ItemKeys) -> Element {
    let mut el = Element::new(TagKind::Step);
    el.attrs.push(Attr::Positional(step.uuid.clone()));
    el.attrs.push(Attr::named("kind", step.kind.as_str()));
    if step.start {
        el.attrs.push(Attr::named("start", "true"));
    }
    if !step.sources.is_empty() {
        el.attrs.push(Attr::named("sources", step.sources.join(",")));
        if step.sources_join == crate::sop::JoinRule::Any {
            el.attrs.push(Attr::named("join", "any"));
        }
    }
    if let Some(t) = &step.targets {
        el.attrs.push(Attr::named("targets", t.join(",")));
    }
    if let Some(a) = &step.agent {
        el.attrs.push(Attr::named("agent", a.clone()));
    }
    let title = match &step.nick {
        Some(n) => format!("**{n}**"),
        None => format!("**{}**", step.uuid),
    };
    el.children.push(MarkupNode::Text(title));
    for (i, arm) in step.case.iter().enumerate() {
        let mut c = Element::new(TagKind::Case);
        c.inline = true;
        c.attrs.push(Attr::Positional(i.to_string()));
        c.attrs.push(Attr::named("targets", arm.targets.join(",")));
        c.children.push(MarkupNode::Text(arm.when.clone()));
        el.children.push(MarkupNode::Element(c));
    }
    for item in &step.items {
        el.children
            .push(MarkupNode::Element(ctx.item(item, keys.next(&item.nick))));
    }
    el.inline = step.case.is_empty() && step.items.is_empty();
    el
}

/// Deterministic per-item keys (`c_NNNN`) derived from the card key and nick.
struct ItemKeys {
    card: String,
    used: BTreeSet<u32>,
}

impl ItemKeys {
    fn new(card_key: &str) -> Self {
        let mut used = BTreeSet::new();
        if let Some(n) = card_key.strip_prefix("c_").and_then(|d| d.parse::<u32>().ok()) {
            used.insert(n);
        }
        Self {
            card: card_key.to_owned(),
            used,
        }
    }

    fn next(&mut self, nick: &str) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.card.bytes().chain([b'/']).chain(nick.bytes()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        let mut n = 1000 + (h % 9000) as u32;
        while !self.used.insert(n) {
            n = if n == 9999 { 1000 } else { n + 1 };
        }
        format!("c_{n}")
    }
}
