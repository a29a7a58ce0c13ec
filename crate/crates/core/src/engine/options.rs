//! Option datasets: inline lists or records fetched from a URL.

use std::time::Duration;

use serde_json::Value;

use crate::markup::{option_from_record, AnxOption, Dataset, OptionsSet};

/// Fetches a dataset URL and returns the parsed JSON body.
pub trait DatasetFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Value, String>;
}

/// HTTP GET with a 5 s timeout and one retry.
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(5)).build(),
        }
    }
}

impl DatasetFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Value, String> {
        let attempt = || -> Result<Value, String> {
            let resp = self.agent.get(url).call().map_err(|e| e.to_string())?;
            resp.into_json::<Value>().map_err(|e| e.to_string())
        };
        attempt().or_else(|_| attempt())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ResolveError {
    Unreachable(String),
    Shape(String),
}

/// Maps a fetched body to options using the set's value/title field names.
pub(crate) fn options_from_body(set: &OptionsSet, body: &Value) -> Result<Vec<AnxOption>, ResolveError> {
    let arr = body
        .as_array()
        .ok_or_else(|| ResolveError::Shape("expected a JSON array of records".into()))?;
    arr.iter()
        .enumerate()
        .map(|(i, r)| {
            option_from_record(r, &set.value_nick, &set.title_nick)
                .map_err(|e| ResolveError::Shape(format!("record {i}: {e}")))
        })
        .collect()
}

pub(crate) fn fetch_options(
    fetcher: &dyn DatasetFetcher,
    set: &OptionsSet,
) -> Result<Vec<AnxOption>, ResolveError> {
    match &set.dataset {
        Dataset::Inline(opts) => Ok(opts.clone()),
        Dataset::Url(url) => {
            let body = fetcher.fetch(url).map_err(ResolveError::Unreachable)?;
            options_from_body(set, &body)
        }
    }
}
