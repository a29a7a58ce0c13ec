//! ANX Markup document tree, parser and canonical serializer.
//!
//! Grammar (canonical form):
//!
//! ```text
//! document := element LF
//! element  := "<x" (SP token)+ ">" body "</x>"
//! body     := ""                                  ; empty element
//!           | inline-text                         ; one line, no LF
//!           | LF (line LF)*                       ; block form
//! line     := element | text-line
//! token    := TAGKIND | bare | quoted | name "=" quoted
//! ```
//!
//! `TAGKIND` is one of `form sop input textarea options button step case` or a
//! decimal ordinal, which denotes an option node (`<x 1 it> Information
//! Technology</x>`). Consecutive text lines inside a block form one text node.
//!
//! Text content is opaque Markdown-flavoured text. Two escapes apply inside
//! text: `\\` for a backslash and `\<` for a `<` that would otherwise start
//! `<x` or `</x`. Quoted attribute values escape `"` and `\` with a backslash.

use std::fmt::Write as _;

use thiserror::Error;

use crate::keys::is_key;

pub const MASK: &str = "▒▒▒";

const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkupError {
    #[error("unbalanced tag at line {line}, column {column}: {detail}")]
    UnbalancedTag {
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("unknown tag kind `{kind}` at line {line}, column {column}")]
    UnknownTagKind {
        kind: String,
        line: usize,
        column: usize,
    },
    #[error("malformed markup at line {line}, column {column}: {detail}")]
    Malformed {
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("invalid UTF-8 at byte {offset}")]
    InvalidUtf8 { offset: usize },
}

impl MarkupError {
    /// 1-based line and column of the error, when it has one.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            Self::UnbalancedTag { line, column, .. }
            | Self::UnknownTagKind { line, column, .. }
            | Self::Malformed { line, column, .. } => Some((*line, *column)),
            Self::InvalidUtf8 { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    Form,
    Sop,
    Input,
    Textarea,
    Options,
    /// Option node; the ordinal is regenerated on every render.
    Option(u32),
    Button,
    Step,
    Case,
}

impl TagKind {
    fn parse(token: &str) -> Option<Self> {
        if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
            return token.parse().ok().map(Self::Option);
        }
        Some(match token {
            "form" => Self::Form,
            "sop" => Self::Sop,
            "input" => Self::Input,
            "textarea" => Self::Textarea,
            "options" => Self::Options,
            "button" => Self::Button,
            "step" => Self::Step,
            "case" => Self::Case,
            _ => return None,
        })
    }

    fn write(&self, out: &mut String) {
        match self {
            Self::Option(n) => {
                let _ = write!(out, "{n}");
            }
            other => out.push_str(match other {
                Self::Form => "form",
                Self::Sop => "sop",
                Self::Input => "input",
                Self::Textarea => "textarea",
                Self::Options => "options",
                Self::Button => "button",
                Self::Step => "step",
                Self::Case => "case",
                Self::Option(_) => unreachable!(),
            }),
        }
    }

    /// Item element kinds whose first text child is `**nick:** value`.
    pub fn is_value_item(&self) -> bool {
        matches!(self, Self::Input | Self::Textarea | Self::Options)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attr {
    Positional(String),
    Named { name: String, value: String },
}

impl Attr {
    pub fn named(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self::Named {
            name: name.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub kind: TagKind,
    pub attrs: Vec<Attr>,
    pub children: Vec<MarkupNode>,
    /// Serialize on one line (`<x ...>text</x>`) when the content allows it.
    pub inline: bool,
}

impl Element {
    pub fn new(kind: TagKind) -> Self {
        Self {
            kind,
            attrs: Vec::new(),
            children: Vec::new(),
            inline: false,
        }
    }

    /// First positional attribute: the key of items and containers, the value of options.
    pub fn key(&self) -> Option<&str> {
        self.attrs.iter().find_map(|a| match a {
            Attr::Positional(v) => Some(v.as_str()),
            Attr::Named { .. } => None,
        })
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find_map(|a| match a {
            Attr::Named { name: n, value } if n == name => Some(value.as_str()),
            _ => None,
        })
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|c| match c {
            MarkupNode::Element(e) => Some(e),
            MarkupNode::Text(_) => None,
        })
    }

    pub fn first_text(&self) -> Option<&str> {
        self.children.iter().find_map(|c| match c {
            MarkupNode::Text(t) => Some(t.as_str()),
            MarkupNode::Element(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarkupNode {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnxMarkupDoc {
    pub root: Element,
}

impl AnxMarkupDoc {
    pub fn card_key(&self) -> &str {
        self.root.key().unwrap_or_default()
    }

    /// Canonical serialization (LF line endings, single-space attributes, trailing LF).
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        write_element(&mut out, &self.root);
        out.push('\n');
        out
    }
}

fn write_element(out: &mut String, el: &Element) {
    out.push_str("<x ");
    el.kind.write(out);
    for a in &el.attrs {
        out.push(' ');
        match a {
            Attr::Positional(v) if is_bare(v) => out.push_str(v),
            Attr::Positional(v) => write_quoted(out, v),
            Attr::Named { name, value } => {
                out.push_str(name);
                out.push('=');
                write_quoted(out, value);
            }
        }
    }
    out.push('>');
    let inline_text = match el.children.as_slice() {
        [] => Some(""),
        [MarkupNode::Text(t)] if el.inline && !t.contains('\n') => Some(t.as_str()),
        _ => None,
    };
    match inline_text {
        Some(t) => escape_text_into(out, t),
        None => {
            out.push('\n');
            for c in &el.children {
                match c {
                    MarkupNode::Element(e) => write_element(out, e),
                    MarkupNode::Text(t) => escape_text_into(out, t),
                }
                out.push('\n');
            }
        }
    }
    out.push_str("</x>");
}

fn is_bare_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '/' | '@' | '+' | '%')
}

fn is_bare(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_bare_char)
}

fn write_quoted(out: &mut String, v: &str) {
    out.push('"');
    for c in v.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

/// Escapes text content for embedding in markup.
pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    escape_text_into(&mut out, s);
    out
}

fn escape_text_into(out: &mut String, s: &str) {
    for (i, c) in s.char_indices() {
        match c {
            '\\' => out.push_str("\\\\"),
            '<' if starts_tag(&s[i..]) => out.push_str("\\<"),
            _ => out.push(c),
        }
    }
}

fn starts_tag(s: &str) -> bool {
    s.starts_with("<x") || s.starts_with("</x")
}

/// Parses raw bytes; invalid UTF-8 is reported as a positioned error.
pub fn parse_markup_bytes(bytes: &[u8]) -> Result<AnxMarkupDoc, MarkupError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MarkupError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    parse_markup(text)
}

pub fn parse_markup(text: &str) -> Result<AnxMarkupDoc, MarkupError> {
    let mut p = Parser { src: text, pos: 0 };
    let root = p.element(None, 0)?;
    p.eat("\n");
    if !p.eof() {
        return Err(p.malformed("trailing content after the root element"));
    }
    if !matches!(root.kind, TagKind::Form | TagKind::Sop) {
        return Err(MarkupError::Malformed {
            line: 1,
            column: 1,
            detail: "root element must be form or sop".into(),
        });
    }
    match root.key() {
        Some(k) if is_key(k) => {}
        _ => {
            return Err(MarkupError::Malformed {
                line: 1,
                column: 1,
                detail: "root element needs a card key like c_8193".into(),
            })
        }
    }
    Ok(AnxMarkupDoc { root })
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn eof(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn line_col(&self, at: usize) -> (usize, usize) {
        let before = &self.src[..at];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(before.chars().count(), |i| {
            before[i + 1..].chars().count()
        }) + 1;
        (line, column)
    }

    fn malformed(&self, detail: impl Into<String>) -> MarkupError {
        let (line, column) = self.line_col(self.pos);
        MarkupError::Malformed {
            line,
            column,
            detail: detail.into(),
        }
    }

    fn unbalanced(&self, detail: impl Into<String>) -> MarkupError {
        let (line, column) = self.line_col(self.pos);
        MarkupError::UnbalancedTag {
            line,
            column,
            detail: detail.into(),
        }
    }

    fn element(&mut self, parent: Option<TagKind>, depth: usize) -> Result<Element, MarkupError> {
        if depth > MAX_DEPTH {
            return Err(self.malformed("nesting too deep"));
        }
        if self.rest().starts_with("</x") {
            return Err(self.unbalanced("closing tag without a matching `<x`"));
        }
        if !self.eat("<x") {
            return Err(self.malformed("expected `<x`"));
        }
        let kind_at = self.pos;
        self.spaces(true)?;
        let kind_start = self.pos;
        let token = self.bare_token();
        if token.is_empty() {
            return Err(self.malformed("expected a tag kind"));
        }
        let kind = TagKind::parse(token).ok_or_else(|| {
            let (line, column) = self.line_col(kind_start);
            MarkupError::UnknownTagKind {
                kind: token.to_owned(),
                line,
                column,
            }
        })?;
        if matches!(kind, TagKind::Option(_)) && parent != Some(TagKind::Options) {
            let (line, column) = self.line_col(kind_at);
            return Err(MarkupError::Malformed {
                line,
                column,
                detail: "option nodes may only appear inside options".into(),
            });
        }

        let mut el = Element::new(kind);
        loop {
            match self.peek() {
                None => return Err(self.unbalanced("unterminated tag header at end of input")),
                Some('>') => {
                    self.pos += 1;
                    break;
                }
                Some(' ') | Some('\t') => {
                    self.spaces(false)?;
                    if self.peek() == Some('>') {
                        continue;
                    }
                    el.attrs.push(self.attr()?);
                }
                Some(_) => return Err(self.malformed("expected a space or `>` in tag header")),
            }
        }

        if self.eat("</x>") {
            el.inline = true;
            return Ok(el);
        }
        if self.eat("\n") {
            self.block_body(&mut el, depth)?;
        } else {
            el.inline = true;
            let text = self.text_run(true)?;
            if !self.eat("</x>") {
                return Err(self.unbalanced("missing `</x>`"));
            }
            el.children.push(MarkupNode::Text(text));
        }
        Ok(el)
    }

    fn block_body(&mut self, el: &mut Element, depth: usize) -> Result<(), MarkupError> {
        let mut pending: Option<String> = None;
        loop {
            if self.eof() {
                return Err(self.unbalanced("element not closed before end of input"));
            }
            let rest = self.rest();
            if rest.starts_with("</x") {
                if !self.eat("</x>") {
                    return Err(self.malformed("expected `</x>`"));
                }
                break;
            }
            if rest.starts_with("<x") {
                if let Some(t) = pending.take() {
                    el.children.push(MarkupNode::Text(t));
                }
                let child = self.element(Some(el.kind), depth + 1)?;
                el.children.push(MarkupNode::Element(child));
            } else {
                let line = self.text_run(false)?;
                match &mut pending {
                    Some(t) => {
                        t.push('\n');
                        t.push_str(&line);
                    }
                    None => pending = Some(line),
                }
            }
            if self.eof() {
                return Err(self.unbalanced("element not closed before end of input"));
            }
            if !self.eat("\n") {
                return Err(self.malformed("expected a line break"));
            }
        }
        if let Some(t) = pending.take() {
            el.children.push(MarkupNode::Text(t));
        }
        Ok(())
    }

    /// Reads text up to a line break (block) or `</x>` (inline), unescaping.
    fn text_run(&mut self, inline: bool) -> Result<String, MarkupError> {
        let mut out = String::new();
        loop {
            let rest = self.rest();
            match rest.chars().next() {
                None => {
                    if inline {
                        return Err(self.unbalanced("missing `</x>` before end of input"));
                    }
                    return Ok(out);
                }
                Some('\n') => {
                    if inline {
                        return Err(self.malformed("line break inside inline content"));
                    }
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some('\\') => {
                            self.pos += 1;
                            out.push('\\');
                        }
                        Some('<') => {
                            self.pos += 1;
                            out.push('<');
                        }
                        _ => out.push('\\'),
                    }
                }
                Some('<') if rest.starts_with("</x>") && inline => return Ok(out),
                Some('<') if starts_tag(rest) => {
                    return Err(self.malformed("unescaped tag inside text"));
                }
                Some(_) => {
                    let c = self.bump().expect("peeked");
                    out.push(c);
                }
            }
        }
    }

    fn spaces(&mut self, required: bool) -> Result<(), MarkupError> {
        let start = self.pos;
        while matches!(self.peek(), Some(' ') | Some('\t')) {
            self.pos += 1;
        }
        if required && self.pos == start {
            return Err(self.malformed("expected a space"));
        }
        Ok(())
    }

    fn bare_token(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if is_bare_char(c) {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    fn quoted(&mut self) -> Result<String, MarkupError> {
        debug_assert_eq!(self.peek(), Some('"'));
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.unbalanced("unterminated quoted value")),
                Some('"') => return Ok(out),
                Some('\\') => match self.peek() {
                    Some(c @ ('"' | '\\')) => {
                        self.pos += 1;
                        out.push(c);
                    }
                    _ => out.push('\\'),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn attr(&mut self) -> Result<Attr, MarkupError> {
        if self.peek() == Some('"') {
            return self.quoted().map(Attr::Positional);
        }
        let token = self.bare_token();
        if token.is_empty() {
            return Err(self.malformed("expected an attribute"));
        }
        if self.peek() != Some('=') {
            return Ok(Attr::Positional(token.to_owned()));
        }
        if !crate::keys::is_identifier(token) {
            return Err(self.malformed("attribute name is not an identifier"));
        }
        self.pos += 1;
        let value = if self.peek() == Some('"') {
            self.quoted()?
        } else {
            let v = self.bare_token();
            if v.is_empty() {
                return Err(self.malformed("expected an attribute value"));
            }
            v.to_owned()
        };
        Ok(Attr::Named {
            name: token.to_owned(),
            value,
        })
    }
}
