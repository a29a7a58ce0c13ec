//! Representation-size measurement.
//!
//! `approx_tokens` is a fixed, model-free rule: the text is split on
//! whitespace, and inside each chunk every non-alphanumeric character starts
//! a new token. So `anx c_1 get` counts `anx`, `c`, `_1`, `get` = 4 and
//! `{"a":1}` counts `{`, `"a`, `"`, `:1`, `}` = 5.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeMeasure {
    pub bytes: usize,
    pub approx_tokens: usize,
}

pub fn measure_size(text: &str) -> SizeMeasure {
    let mut tokens = 0;
    let mut in_token = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_token = false;
        } else if !c.is_alphanumeric() || !in_token {
            tokens += 1;
            in_token = true;
        }
    }
    SizeMeasure {
        bytes: text.len(),
        approx_tokens: tokens,
    }
}
