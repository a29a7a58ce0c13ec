//! TF-IDF discovery index.
//!
//! Terms are maximal runs of alphanumeric characters, lowercased. A term's
//! weight in a document (or query) is `tf * idf` with raw counts for `tf`
//! and `idf = ln((N + 1) / (df + 1)) + 1`, where `N` is the number of indexed
//! apps and `df` the number of apps containing the term. Similarity is the
//! cosine of the two weight vectors. Apps scoring zero are not returned.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Splits text into lowercased alphanumeric terms.
pub fn terms(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredApp {
    pub app_id: String,
    pub title: String,
    pub score: f64,
}

/// A ranking backend. Implementations must be deterministic.
pub trait DiscoveryIndex: Send + Sync {
    fn upsert(&mut self, app_id: &str, title: &str, text: &str);
    /// At most `k` apps by descending score, ties by ascending app id.
    fn top_k(&self, query: &str, k: usize) -> Vec<ScoredApp>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default)]
struct Doc {
    title: String,
    tf: BTreeMap<String, u32>,
    norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TfIdfIndex {
    docs: BTreeMap<String, Doc>,
    df: HashMap<String, usize>,
    /// term -> app ids containing it.
    postings: HashMap<String, Vec<String>>,
}

impl TfIdfIndex {
    pub fn new() -> Self {
        Self::default()
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n + 1.0) / (df + 1.0)).ln() + 1.0
    }

    fn refresh_norms(&mut self) {
        let idf: HashMap<&str, f64> = self.df.keys().map(|t| (t.as_str(), self.idf(t))).collect();
        let norms: Vec<(String, f64)> = self
            .docs
            .iter()
            .map(|(id, d)| {
                let sq: f64 = d
                    .tf
                    .iter()
                    .map(|(t, &c)| {
                        let w = f64::from(c) * idf[t.as_str()];
                        w * w
                    })
                    .sum();
                (id.clone(), sq.sqrt())
            })
            .collect();
        for (id, n) in norms {
            if let Some(d) = self.docs.get_mut(&id) {
                d.norm = n;
            }
        }
    }
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0))
}

impl DiscoveryIndex for TfIdfIndex {
    fn upsert(&mut self, app_id: &str, title: &str, text: &str) {
        if let Some(old) = self.docs.remove(app_id) {
            for t in old.tf.keys() {
                if let Some(df) = self.df.get_mut(t) {
                    *df -= 1;
                    if *df == 0 {
                        self.df.remove(t);
                    }
                }
                if let Some(p) = self.postings.get_mut(t) {
                    p.retain(|id| id != app_id);
                    if p.is_empty() {
                        self.postings.remove(t);
                    }
                }
            }
        }
        let mut tf = BTreeMap::new();
        for t in terms(text) {
            *tf.entry(t).or_insert(0) += 1;
        }
        for t in tf.keys() {
            *self.df.entry(t.clone()).or_insert(0) += 1;
            self.postings.entry(t.clone()).or_default().push(app_id.to_owned());
        }
        self.docs.insert(
            app_id.to_owned(),
            Doc {
                title: title.to_owned(),
                tf,
                norm: 0.0,
            },
        );
        self.refresh_norms();
    }

    fn top_k(&self, query: &str, k: usize) -> Vec<ScoredApp> {
        let mut qtf: BTreeMap<String, u32> = BTreeMap::new();
        for t in terms(query) {
            *qtf.entry(t).or_insert(0) += 1;
        }
        let qw: Vec<(&String, f64)> = qtf.iter().map(|(t, &c)| (t, f64::from(c) * self.idf(t))).collect();
        let qnorm = qw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if qnorm == 0.0 || k == 0 {
            return Vec::new();
        }
        let mut dots: BTreeMap<&str, f64> = BTreeMap::new();
        for (t, w) in &qw {
            let idf = self.idf(t);
            for id in self.postings.get(*t).into_iter().flatten() {
                let d = &self.docs[id];
                let dw = f64::from(d.tf[*t]) * idf;
                *dots.entry(id.as_str()).or_insert(0.0) += w * dw;
            }
        }
        let mut scored: Vec<(&str, f64)> = dots
            .into_iter()
            .filter_map(|(id, dot)| {
                let norm = self.docs[id].norm;
                let s = (dot / (qnorm * norm)).clamp(0.0, 1.0);
                (norm > 0.0 && s > 0.0).then_some((id, s))
            })
            .collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
            scored.truncate(k);
        }
        scored.sort_by(|a, b| rank_order(*a, *b));
        scored
            .into_iter()
            .map(|(id, score)| ScoredApp {
                app_id: id.to_owned(),
                title: self.docs[id].title.clone(),
                score,
            })
            .collect()
    }

    fn len(&self) -> usize {
        self.docs.len()
    }
}
