use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::bm25::{bm25_score, Bm25Params, CorpusStats};
use super::tokenize;
use super::RetrievalError;

/// Scores of one candidate against one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSkill {
    pub id: Uuid,
    pub dense_raw: f64,
    pub lexical_raw: f64,
    pub dense_norm: f64,
    pub lexical_norm: f64,
    pub rel: f64,
}

/// A skill as seen by the ranker: its document text and embedding.
#[derive(Debug, Clone, Copy)]
pub struct RankCandidate<'a> {
    pub id: Uuid,
    pub text: &'a str,
    pub embedding: &'a [f32],
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Min-max scaling into `[0, 1]`. When every score is equal the result is
/// all ones if that score is positive, all zeros otherwise.
pub fn minmax_normalize(scores: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    if scores.is_empty() {
        return Err(RetrievalError::EmptyInput);
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        let fill = if max > 0.0 { 1.0 } else { 0.0 };
        return Ok(vec![fill; scores.len()]);
    }
    let span = max - min;
    Ok(scores.iter().map(|&x| ((x - min) / span).clamp(0.0, 1.0)).collect())
}

/// Rank candidates by `weight·d̂ + (1 − weight)·b̂`, descending.
///
/// Ties fall back to the higher raw dense score, then to id order.
pub fn hybrid_rank(
    query: &str,
    query_embedding: &[f32],
    candidates: &[RankCandidate<'_>],
    weight: f64,
    bm25: &Bm25Params,
) -> Result<Vec<ScoredSkill>, RetrievalError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let query_tokens = tokenize(query);
    let docs: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c.text)).collect();
    let stats = CorpusStats::from_documents(&docs);

    let dense = candidates
        .iter()
        .map(|c| cosine_similarity(query_embedding, c.embedding))
        .collect::<Result<Vec<_>, _>>()?;
    let lexical: Vec<f64> = docs
        .iter()
        .map(|doc| bm25_score(&query_tokens, doc, &stats, bm25))
        .collect();
    let dense_norm = minmax_normalize(&dense)?;
    let lexical_norm = minmax_normalize(&lexical)?;

    let mut scored: Vec<ScoredSkill> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| ScoredSkill {
            id: c.id,
            dense_raw: dense[i],
            lexical_raw: lexical[i],
            dense_norm: dense_norm[i],
            lexical_norm: lexical_norm[i],
            rel: fuse(weight, dense_norm[i], lexical_norm[i]),
        })
        .collect();
    scored.sort_by(rank_order);
    Ok(scored)
}

pub fn fuse(weight: f64, dense_norm: f64, lexical_norm: f64) -> f64 {
    weight * dense_norm + (1.0 - weight) * lexical_norm
}

pub(crate) fn rank_order(a: &ScoredSkill, b: &ScoredSkill) -> Ordering {
    b.rel
        .total_cmp(&a.rel)
        .then_with(|| b.dense_raw.total_cmp(&a.dense_raw))
        .then_with(|| a.id.cmp(&b.id))
}

/// Keep the first `k` ranked entries whose fused score reaches `eta`.
/// An empty result means the turn is served without skills.
pub fn select_topk_threshold(ranked: &[ScoredSkill], k: usize, eta: f64) -> Vec<ScoredSkill> {
    ranked.iter().take(k).filter(|s| s.rel >= eta).cloned().collect()
}

/// Management-time neighbour search: the top `m` existing skills for a
/// candidate query and the best of them. The best is absent only when
/// there are no existing skills.
pub fn nearest_neighbors(
    query: &str,
    query_embedding: &[f32],
    existing: &[RankCandidate<'_>],
    alpha: f64,
    m: usize,
    bm25: &Bm25Params,
) -> Result<(Vec<ScoredSkill>, Option<ScoredSkill>), RetrievalError> {
    let mut ranked = hybrid_rank(query, query_embedding, existing, alpha, bm25)?;
    ranked.truncate(m.max(1));
    let best = ranked.first().cloned();
    Ok((ranked, best))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let c = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(RetrievalError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(RetrievalError::ZeroVector)
        );
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[0.7, 0.7]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(minmax_normalize(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&[-0.3, -0.3]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(minmax_normalize(&[]), Err(RetrievalError::EmptyInput));
    }

    fn scored(rel: f64) -> ScoredSkill {
        ScoredSkill {
            id: Uuid::new_v4(),
            dense_raw: 0.0,
            lexical_raw: 0.0,
            dense_norm: 0.0,
            lexical_norm: 0.0,
            rel,
        }
    }

    #[test]
    fn selection_examples() {
        let ranked = vec![scored(0.9), scored(0.55)];
        let h = select_topk_threshold(&ranked, 3, 0.6);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].rel, 0.9);

        assert!(select_topk_threshold(&ranked, 3, 0.95).is_empty());

        let passing: Vec<_> = (0..5).map(|i| scored(0.9 - i as f64 * 0.01)).collect();
        assert_eq!(select_topk_threshold(&passing, 1, 0.5).len(), 1);
    }

    #[test]
    fn fusion_weight_half() {
        assert_eq!(fuse(0.5, 1.0, 0.0), 0.5);
    }

    #[test]
    fn empty_bank_has_no_neighbor() {
        let (n, best) = nearest_neighbors("q", &[1.0], &[], 0.7, 5, &Bm25Params::default()).unwrap();
        assert!(n.is_empty());
        assert!(best.is_none());
    }

    #[test]
    fn single_skill_is_the_neighbor() {
        let id = Uuid::new_v4();
        let emb = [0.0f32, 1.0];
        let only = [RankCandidate {
            id,
            text: "anything",
            embedding: &emb,
        }];
        let (n, best) = nearest_neighbors("unrelated", &[1.0, 0.0], &only, 0.7, 5, &Bm25Params::default()).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(best.unwrap().id, id);
    }
}
