//! Hybrid lexical + dense skill retrieval.

mod bm25;
mod hybrid;
mod index;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::skill::{Skill, SkillCandidate};

pub use bm25::{bm25_score, Bm25Params, CorpusStats};
pub use hybrid::{
    cosine_similarity, fuse, hybrid_rank, minmax_normalize, nearest_neighbors, select_topk_threshold, RankCandidate,
    ScoredSkill,
};
pub use index::{cache_name, IndexError, IndexedSkill, SkillIndex, SkillSnapshot};
pub use tokenize::tokenize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot compute cosine similarity of a zero vector")]
    ZeroVector,
    #[error("cannot normalize an empty score list")]
    EmptyInput,
}

/// Fusion weights and selection limits for serving and management.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridWeights {
    /// Dense share of the serving-time score.
    pub lambda: f64,
    /// Dense share of the management-time score.
    pub alpha: f64,
    /// Minimum fused score for a skill to be injected.
    pub eta: f64,
    /// Serving top-K.
    pub k: usize,
    /// Management neighbour count.
    pub m: usize,
    /// Optional absolute floor on raw cosine similarity. Off by default.
    pub dense_floor: Option<f64>,
}

impl Default for HybridWeights {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            alpha: 0.7,
            eta: 0.35,
            k: 3,
            m: 5,
            dense_floor: None,
        }
    }
}

impl HybridWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, value) in [("lambda", self.lambda), ("alpha", self.alpha), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(format!("retrieval.{name} must be in [0, 1], got {value}"));
            }
        }
        if self.k == 0 {
            return Err("retrieval.k must be positive".into());
        }
        if self.m == 0 {
            return Err("retrieval.m must be positive".into());
        }
        Ok(())
    }
}

/// Which skill fields make up the text a skill is matched on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DocumentFields {
    pub include_prompt: bool,
}

/// Name, description, triggers and tags joined by newlines, optionally
/// followed by the prompt body.
pub fn skill_document(skill: &Skill, fields: DocumentFields) -> String {
    let mut parts: Vec<&str> = vec![&skill.name, &skill.description];
    parts.extend(skill.triggers.iter().map(String::as_str));
    parts.extend(skill.tags.iter().map(String::as_str));
    if fields.include_prompt {
        parts.push(&skill.prompt);
    }
    parts.join("\n")
}

/// Management-time query for a candidate: name, description, triggers and
/// instructions.
pub fn candidate_query(candidate: &SkillCandidate) -> String {
    let mut parts: Vec<&str> = vec![&candidate.name, &candidate.description];
    parts.extend(candidate.triggers.iter().map(String::as_str));
    parts.push(&candidate.prompt);
    parts.join("\n")
}
