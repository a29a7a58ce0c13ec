//! Agent-facing redaction of sensitive item values.

use std::collections::BTreeSet;

use super::doc::{AnxMarkupDoc, Element, MarkupNode, MASK};

/// Returns a copy of `doc` where the value of every item whose nick is in
/// `sensitive` is replaced by the mask token. Tags, keys and order are kept.
pub fn redact(doc: &AnxMarkupDoc, sensitive: &BTreeSet<String>) -> AnxMarkupDoc {
    let mut out = doc.clone();
    if !sensitive.is_empty() {
        redact_element(&mut out.root, sensitive);
    }
    out
}

fn redact_element(el: &mut Element, sensitive: &BTreeSet<String>) {
    if el.kind.is_value_item() {
        if let Some(MarkupNode::Text(text)) = el
            .children
            .iter_mut()
            .find(|c| matches!(c, MarkupNode::Text(_)))
        {
            if let Some(masked) = mask_value(text, sensitive) {
                *text = masked;
            }
        }
    }
    for child in &mut el.children {
        if let MarkupNode::Element(e) = child {
            redact_element(e, sensitive);
        }
    }
}

/// `**nick:**<sep><value>` → `**nick:**<sep>▒▒▒` when nick is sensitive and a value is present.
fn mask_value(text: &str, sensitive: &BTreeSet<String>) -> Option<String> {
    let inner = text.strip_prefix("**")?;
    let end = inner.find(":**")?;
    let nick = &inner[..end];
    if !sensitive.contains(nick) {
        return None;
    }
    let label_len = 2 + end + 3;
    let rest = &text[label_len..];
    if rest.is_empty() {
        return None;
    }
    let sep = if rest.starts_with('\n') { '\n' } else { ' ' };
    Some(format!("{}{sep}{MASK}", &text[..label_len]))
}
