//! ANX Config: the JSON-shaped declarative definition of a form or SOP.
//!
//! Parsing is done over a `serde_json::Value` rather than through derived
//! deserializers so that every schema violation carries the field path where
//! it was found (`items[1].optionsSet`). Unknown fields are kept in an
//! `extensions` bag at the level they appeared.

use std::collections::BTreeSet;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::keys::is_identifier;
use crate::sop::StepDef;

pub const PROTOCOL: &str = "ANX";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl ConfigError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Field path for schema errors.
    pub fn path(&self) -> Option<&str> {
        match self {
            Self::Schema { path, .. } => Some(path),
            Self::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigKind {
    Form,
    Sop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Input,
    Textarea,
    Options,
    Button,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Textarea => "textarea",
            Self::Options => "options",
            Self::Button => "button",
        }
    }

    /// Kinds that hold a user-supplied value.
    pub fn carries_value(self) -> bool {
        !matches!(self, Self::Button)
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "input" => Self::Input,
            "textarea" => Self::Textarea,
            "options" => Self::Options,
            "button" => Self::Button,
            _ => return None,
        })
    }
}

/// One selectable option: the stable `value` slug and its display `title`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnxOption {
    pub value: String,
    pub title: String,
}

impl AnxOption {
    pub fn new(value: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            title: title.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Inline(Vec<AnxOption>),
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionsSet {
    pub dataset: Dataset,
    pub value_nick: String,
    pub title_nick: String,
}

impl OptionsSet {
    pub fn url(&self) -> Option<&str> {
        match &self.dataset {
            Dataset::Url(u) => Some(u),
            Dataset::Inline(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemDef {
    pub nick: String,
    pub kind: ItemKind,
    pub sensitive: bool,
    pub required: bool,
    /// Buttons only: the action this button triggers needs human confirmation.
    pub confirm: bool,
    pub options_set: Option<OptionsSet>,
    pub tap: Option<String>,
    pub label: Option<String>,
    pub extensions: Map<String, Value>,
}

impl ItemDef {
    pub fn new(nick: impl Into<String>, kind: ItemKind) -> Self {
        Self {
            nick: nick.into(),
            kind,
            sensitive: false,
            required: false,
            confirm: false,
            options_set: None,
            tap: None,
            label: None,
            extensions: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnxConfig {
    pub protocol: String,
    pub version: semver::Version,
    pub kind: ConfigKind,
    pub title: String,
    pub description: Option<String>,
    pub items: Vec<ItemDef>,
    pub steps: Vec<StepDef>,
    pub extensions: Map<String, Value>,
}

impl AnxConfig {
    pub fn item(&self, nick: &str) -> Option<&ItemDef> {
        self.items.iter().find(|i| i.nick == nick)
    }

    pub fn sensitive_nicks(&self) -> BTreeSet<String> {
        self.items
            .iter()
            .filter(|i| i.sensitive)
            .map(|i| i.nick.clone())
            .collect()
    }

    /// True when some button bound to `action` is marked `confirm: true`.
    pub fn action_requires_confirmation(&self, action: &str) -> bool {
        self.items
            .iter()
            .any(|i| i.kind == ItemKind::Button && i.confirm && i.tap.as_deref() == Some(action))
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("protocol".into(), Value::from(self.protocol.clone()));
        m.insert("version".into(), Value::from(self.version.to_string()));
        m.insert(
            "kind".into(),
            Value::from(match self.kind {
                ConfigKind::Form => "form",
                ConfigKind::Sop => "sop",
            }),
        );
        m.insert("title".into(), Value::from(self.title.clone()));
        if let Some(d) = &self.description {
            m.insert("description".into(), Value::from(d.clone()));
        }
        match self.kind {
            ConfigKind::Form => {
                m.insert("items".into(), items_to_json(&self.items));
            }
            ConfigKind::Sop => {
                m.insert(
                    "steps".into(),
                    Value::Array(self.steps.iter().map(StepDef::to_json).collect()),
                );
            }
        }
        for (k, v) in &self.extensions {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }
}

impl Serialize for AnxConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnxConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        config_from_value(&v).map_err(D::Error::custom)
    }
}

/// Parses and validates an ANX Config document.
pub fn parse_config(text: &str) -> Result<AnxConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config_from_value(&value)
}

pub fn config_from_value(value: &Value) -> Result<AnxConfig, ConfigError> {
    let mut root = Fields::new(value, "")?;

    let protocol = root.req_str("protocol")?;
    if protocol != PROTOCOL {
        return Err(ConfigError::schema("protocol", format!("expected \"{PROTOCOL}\"")));
    }
    let version_text = root.req_str("version")?;
    let version = semver::Version::parse(&version_text)
        .map_err(|e| ConfigError::schema("version", format!("not MAJOR.MINOR.PATCH: {e}")))?;
    let kind = match root.req_str("kind")?.as_str() {
        "form" => ConfigKind::Form,
        "sop" => ConfigKind::Sop,
        other => return Err(ConfigError::schema("kind", format!("unknown kind `{other}`"))),
    };
    let title = root.req_str("title")?;
    let description = root.opt_str("description")?;

    let items_v = root.take("items");
    let steps_v = root.take("steps");
    let (items, steps) = match kind {
        ConfigKind::Form => {
            if steps_v.is_some() {
                return Err(ConfigError::schema("steps", "not allowed when kind is form"));
            }
            let arr = items_v
                .ok_or_else(|| ConfigError::schema("items", "required when kind is form"))?;
            let items = parse_items(&arr, "items")?;
            if items.is_empty() {
                return Err(ConfigError::schema("items", "must not be empty"));
            }
            (items, Vec::new())
        }
        ConfigKind::Sop => {
            if items_v.is_some() {
                return Err(ConfigError::schema("items", "not allowed when kind is sop"));
            }
            let steps_v =
                steps_v.ok_or_else(|| ConfigError::schema("steps", "required when kind is sop"))?;
            let arr = steps_v
                .as_array()
                .ok_or_else(|| ConfigError::schema("steps", "expected an array"))?;
            if arr.is_empty() {
                return Err(ConfigError::schema("steps", "must not be empty"));
            }
            let steps = arr
                .iter()
                .enumerate()
                .map(|(i, v)| StepDef::from_json(v, &format!("steps[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            (Vec::new(), steps)
        }
    };

    let config = AnxConfig {
        protocol,
        version,
        kind,
        title,
        description,
        items,
        steps,
        extensions: root.rest(),
    };
    check_unique_nicks(&config)?;
    Ok(config)
}

fn check_unique_nicks(config: &AnxConfig) -> Result<(), ConfigError> {
    let mut seen = BTreeSet::new();
    for (i, item) in config.items.iter().enumerate() {
        if !seen.insert(item.nick.as_str()) {
            return Err(ConfigError::schema(
                format!("items[{i}].nick"),
                format!("duplicate nick `{}`", item.nick),
            ));
        }
    }
    for (i, step) in config.steps.iter().enumerate() {
        if let Some(nick) = &step.nick {
            if !seen.insert(nick.as_str()) {
                return Err(ConfigError::schema(
                    format!("steps[{i}].nick"),
                    format!("duplicate nick `{nick}`"),
                ));
            }
        }
        for (j, item) in step.items.iter().enumerate() {
            if !seen.insert(item.nick.as_str()) {
                return Err(ConfigError::schema(
                    format!("steps[{i}].items[{j}].nick"),
                    format!("duplicate nick `{}`", item.nick),
                ));
            }
        }
    }
    Ok(())
}

pub(crate) fn parse_items(v: &Value, path: &str) -> Result<Vec<ItemDef>, ConfigError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ConfigError::schema(path, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| parse_item(v, &format!("{path}[{i}]")))
        .collect()
}

fn parse_item(v: &Value, path: &str) -> Result<ItemDef, ConfigError> {
    let mut f = Fields::new(v, path)?;
    // `name` is accepted as an alias of `nick` (SOP form steps use it).
    let nick = match f.opt_str("nick")? {
        Some(n) => n,
        None => f
            .opt_str("name")?
            .ok_or_else(|| ConfigError::schema(f.path("nick"), "required"))?,
    };
    if !is_identifier(&nick) {
        return Err(ConfigError::schema(f.path("nick"), "not an identifier"));
    }
    let kind_s = f.req_str("kind")?;
    let kind = ItemKind::parse(&kind_s)
        .ok_or_else(|| ConfigError::schema(f.path("kind"), format!("unknown item kind `{kind_s}`")))?;

    let mut sensitive = f.opt_bool("sensitive")?.unwrap_or(false);
    match f.opt_str("type")?.as_deref() {
        None => {}
        Some("sensitive") => sensitive = true,
        Some(other) => {
            return Err(ConfigError::schema(f.path("type"), format!("unknown type `{other}`")))
        }
    }
    if sensitive && !kind.carries_value() {
        return Err(ConfigError::schema(
            f.path("sensitive"),
            "only input, textarea and options items can be sensitive",
        ));
    }
    let required = f.opt_bool("required")?.unwrap_or(false);
    let confirm = f.opt_bool("confirm")?.unwrap_or(false);
    let tap = f.opt_str("tap")?;
    let label = f.opt_str("label")?;
    if kind != ItemKind::Button {
        if tap.is_some() {
            return Err(ConfigError::schema(f.path("tap"), "only buttons have a tap action"));
        }
        if confirm {
            return Err(ConfigError::schema(f.path("confirm"), "only buttons can require confirmation"));
        }
    }
    if let Some(t) = &tap {
        if !crate::keys::is_action(t) {
            return Err(ConfigError::schema(f.path("tap"), "not an action name"));
        }
    }

    let options_set = match f.take("optionsSet") {
        Some(os) => Some(parse_options_set(&os, &f.path("optionsSet"))?),
        None => None,
    };
    match (kind == ItemKind::Options, options_set.is_some()) {
        (true, false) => {
            return Err(ConfigError::schema(f.path("optionsSet"), "required for options items"))
        }
        (false, true) => {
            return Err(ConfigError::schema(f.path("optionsSet"), "only options items have an optionsSet"))
        }
        _ => {}
    }

    Ok(ItemDef {
        nick,
        kind,
        sensitive,
        required,
        confirm,
        options_set,
        tap,
        label,
        extensions: f.rest(),
    })
}

fn parse_options_set(v: &Value, path: &str) -> Result<OptionsSet, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let value_nick = f.opt_str("valueNick")?.unwrap_or_else(|| "value".into());
    let title_nick = f.opt_str("titleNick")?.unwrap_or_else(|| "title".into());
    if value_nick == title_nick {
        return Err(ConfigError::schema(f.path("titleNick"), "must differ from valueNick"));
    }
    let ds_path = f.path("dataset");
    let ds = f
        .take("dataset")
        .ok_or_else(|| ConfigError::schema(&ds_path, "required"))?;
    let dataset = match &ds {
        Value::Array(records) => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let rp = format!("{ds_path}[{i}]");
                let opt = option_from_record(r, &value_nick, &title_nick)
                    .map_err(|m| ConfigError::schema(&rp, m))?;
                if opt.value.is_empty() {
                    return Err(ConfigError::schema(rp, "empty value is reserved for the placeholder"));
                }
                if !seen.insert(opt.value.clone()) {
                    return Err(ConfigError::schema(rp, format!("duplicate option value `{}`", opt.value)));
                }
                out.push(opt);
            }
            Dataset::Inline(out)
        }
        Value::Object(m) => {
            if m.len() != 1 {
                return Err(ConfigError::schema(
                    ds_path,
                    "expected exactly one of an inline list or {\"url_dataset\": ...}",
                ));
            }
            let url = m
                .get("url_dataset")
                .and_then(Value::as_str)
                .ok_or_else(|| ConfigError::schema(format!("{ds_path}.url_dataset"), "expected a URL string"))?;
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(ConfigError::schema(format!("{ds_path}.url_dataset"), "expected an http(s) URL"));
            }
            Dataset::Url(url.to_owned())
        }
        _ => return Err(ConfigError::schema(ds_path, "expected an array or object")),
    };
    if let Some((k, _)) = f.rest().into_iter().next() {
        return Err(ConfigError::schema(f.path(&k), "unknown optionsSet field"));
    }
    Ok(OptionsSet {
        dataset,
        value_nick,
        title_nick,
    })
}

/// Maps one dataset record to an option via the value/title field names.
pub(crate) fn option_from_record(
    record: &Value,
    value_nick: &str,
    title_nick: &str,
) -> Result<AnxOption, String> {
    let obj = record.as_object().ok_or("record is not an object")?;
    let scalar = |key: &str| -> Result<String, String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(format!("field `{key}` is not a string")),
            None => Err(format!("missing field `{key}`")),
        }
    };
    Ok(AnxOption {
        value: scalar(value_nick)?,
        title: scalar(title_nick)?,
    })
}

pub(crate) fn items_to_json(items: &[ItemDef]) -> Value {
    Value::Array(items.iter().map(item_to_json).collect())
}

fn item_to_json(item: &ItemDef) -> Value {
    let mut m = Map::new();
    m.insert("nick".into(), Value::from(item.nick.clone()));
    m.insert("kind".into(), Value::from(item.kind.as_str()));
    if item.sensitive {
        m.insert("sensitive".into(), Value::Bool(true));
    }
    if item.required {
        m.insert("required".into(), Value::Bool(true));
    }
    if item.confirm {
        m.insert("confirm".into(), Value::Bool(true));
    }
    if let Some(t) = &item.tap {
        m.insert("tap".into(), Value::from(t.clone()));
    }
    if let Some(l) = &item.label {
        m.insert("label".into(), Value::from(l.clone()));
    }
    if let Some(os) = &item.options_set {
        let dataset = match &os.dataset {
            Dataset::Url(u) => serde_json::json!({ "url_dataset": u }),
            Dataset::Inline(opts) => Value::Array(
                opts.iter()
                    .map(|o| {
                        let mut r = Map::new();
                        r.insert(os.value_nick.clone(), Value::from(o.value.clone()));
                        r.insert(os.title_nick.clone(), Value::from(o.title.clone()));
                        Value::Object(r)
                    })
                    .collect(),
            ),
        };
        m.insert(
            "optionsSet".into(),
            serde_json::json!({
                "dataset": dataset,
                "valueNick": os.value_nick,
                "titleNick": os.title_nick,
            }),
        );
    }
    for (k, v) in &item.extensions {
        m.insert(k.clone(), v.clone());
    }
    Value::Object(m)
}

/// Consuming view over a JSON object that tracks the current field path.
pub(crate) struct Fields {
    map: Map<String, Value>,
    base: String,
}

impl Fields {
    pub(crate) fn new(v: &Value, base: &str) -> Result<Self, ConfigError> {
        match v {
            Value::Object(m) => Ok(Self {
                map: m.clone(),
                base: base.to_owned(),
            }),
            _ => Err(ConfigError::schema(
                if base.is_empty() { "$" } else { base },
                "expected an object",
            )),
        }
    }

    pub(crate) fn path(&self, key: &str) -> String {
        if self.base.is_empty() {
            key.to_owned()
        } else {
            format!("{}.{key}", self.base)
        }
    }

    pub(crate) fn take(&mut self, key: &str) -> Option<Value> {
        self.map.shift_remove(key)
    }

    pub(crate) fn req_str(&mut self, key: &str) -> Result<String, ConfigError> {
        let path = self.path(key);
        match self.take(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(ConfigError::schema(path, "expected a string")),
            None => Err(ConfigError::schema(path, "required")),
        }
    }

    pub(crate) fn opt_str(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        let path = self.path(key);
        match self.take(key) {
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ConfigError::schema(path, "expected a string")),
            None => Ok(None),
        }
    }

    pub(crate) fn opt_bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        let path = self.path(key);
        match self.take(key) {
            Some(Value::Bool(b)) => Ok(Some(b)),
            Some(_) => Err(ConfigError::schema(path, "expected a boolean")),
            None => Ok(None),
        }
    }

    pub(crate) fn opt_str_list(&mut self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        let path = self.path(key);
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| ConfigError::schema(format!("{path}[{i}]"), "expected a string"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(ConfigError::schema(path, "expected an array of strings")),
        }
    }

    /// Fields not consumed so far.
    pub(crate) fn rest(&self) -> Map<String, Value> {
        self.map.clone()
    }
}
