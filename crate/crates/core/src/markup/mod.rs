//! Expression-layer formats: ANX Config (JSON) and ANX Markup (tagged text).

mod config;
mod doc;
mod redact;
mod render;
mod size;

pub use config::{
    config_from_value, parse_config, AnxConfig, AnxOption, ConfigError, ConfigKind, Dataset,
    ItemDef, ItemKind, OptionsSet, PROTOCOL,
};
pub(crate) use config::{option_from_record, parse_items, Fields};
pub(crate) use config::items_to_json;
pub use doc::{
    escape_text, parse_markup, parse_markup_bytes, AnxMarkupDoc, Attr, Element, MarkupError,
    MarkupNode, TagKind, MASK,
};
pub use redact::redact;
pub use render::{render_doc, render_markup, RenderError, ResolvedOptions, ViewerRole};
pub use size::{measure_size, SizeMeasure};
