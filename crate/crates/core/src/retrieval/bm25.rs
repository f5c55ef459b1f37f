//! Okapi BM25 over a small candidate set.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · f(t,d)·(k1+1) / (f(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = max(0, ln((N − df(t) + 0.5) / (df(t) + 0.5)))
//! ```
//!
//! Query terms are taken as a set: a term repeated in the query counts once.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), String> {
        if self.k1.is_nan() || self.k1 < 0.0 {
            return Err(format!("bm25.k1 must be >= 0, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("bm25.b must be in [0, 1], got {}", self.b));
        }
        Ok(())
    }
}

/// Document frequencies and length statistics of a candidate set.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub documents: usize,
    pub avg_doc_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<D: AsRef<[String]>>(docs: &[D]) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut total_len = 0usize;
        for doc in docs {
            let doc = doc.as_ref();
            total_len += doc.len();
            let unique: HashSet<&String> = doc.iter().collect();
            for term in unique {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
        }
        let avg_doc_len = if docs.is_empty() {
            0.0
        } else {
            total_len as f64 / docs.len() as f64
        };
        Self {
            documents: docs.len(),
            avg_doc_len,
            doc_freq,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.documents as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }
}

pub fn bm25_score(query: &[String], doc: &[String], stats: &CorpusStats, params: &Bm25Params) -> f64 {
    if doc.is_empty() || query.is_empty() {
        return 0.0;
    }
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for term in doc {
        *tf.entry(term.as_str()).or_default() += 1;
    }
    let len_ratio = if stats.avg_doc_len > 0.0 {
        doc.len() as f64 / stats.avg_doc_len
    } else {
        1.0
    };
    let norm = params.k1 * (1.0 - params.b + params.b * len_ratio);

    let mut seen = HashSet::new();
    let mut score = 0.0;
    for term in query {
        if !seen.insert(term.as_str()) {
            continue;
        }
        let Some(&f) = tf.get(term.as_str()) else {
            continue;
        };
        let f = f as f64;
        score += stats.idf(term) * f * (params.k1 + 1.0) / (f + norm);
    }
    score
}
