mod support;

use autoskill_core::retrieval::{
    candidate_query, hybrid_rank, minmax_normalize, nearest_neighbors, select_topk_threshold, skill_document,
    Bm25Params, DocumentFields, RankCandidate, ScoredSkill,
};
use autoskill_core::skill::Skill;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{gen, oracle};

const DIM: usize = 8;

struct Bank {
    skills: Vec<Skill>,
    docs: Vec<String>,
    embeddings: Vec<Vec<f32>>,
}

impl Bank {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(1..=20);
        let skills: Vec<Skill> = (0..n).map(|_| gen::skill(rng)).collect();
        let docs = skills
            .iter()
            .map(|s| skill_document(s, DocumentFields::default()))
            .collect();
        let embeddings = (0..n).map(|_| gen::embedding(rng, DIM)).collect();
        Self {
            skills,
            docs,
            embeddings,
        }
    }

    fn candidates(&self) -> Vec<RankCandidate<'_>> {
        (0..self.skills.len())
            .map(|i| RankCandidate {
                id: self.skills[i].id,
                text: &self.docs[i],
                embedding: &self.embeddings[i],
            })
            .collect()
    }

    fn oracle_docs(&self) -> Vec<oracle::Doc<'_>> {
        (0..self.skills.len())
            .map(|i| oracle::Doc {
                id: self.skills[i].id.to_string(),
                text: &self.docs[i],
                embedding: &self.embeddings[i],
            })
            .collect()
    }
}

fn assert_matches_oracle(got: &[ScoredSkill], want: &[oracle::Row]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert_eq!(g.id.to_string(), w.id, "rank order differs");
        for (a, b, what) in [
            (g.dense_raw, w.d, "dense"),
            (g.lexical_raw, w.b, "lexical"),
            (g.dense_norm, w.dn, "dense_norm"),
            (g.lexical_norm, w.bn, "lexical_norm"),
            (g.rel, w.rel, "rel"),
        ] {
            assert!((a - b).abs() <= 1e-9, "{what}: {a} vs {b}");
        }
    }
}

#[test]
fn hybrid_rank_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bm25 = Bm25Params::default();
    for _ in 0..50 {
        let bank = Bank::random(&mut rng);
        for _ in 0..rng.random_range(1..=30) {
            let query = gen::phrase(&mut rng, 1, 6);
            let q = gen::embedding(&mut rng, DIM);
            let weight = rng.random_range(0.0..=1.0);
            let got = hybrid_rank(&query, &q, &bank.candidates(), weight, &bm25).unwrap();
            let want = oracle::rank(&query, &q, &bank.oracle_docs(), weight, bm25.k1, bm25.b);
            assert_matches_oracle(&got, &want);
        }
    }
}

#[test]
fn nearest_neighbor_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let bm25 = Bm25Params::default();
    for _ in 0..50 {
        let bank = Bank::random(&mut rng);
        let candidate = gen::candidate(&mut rng);
        let text = candidate_query(&candidate);
        let expected_text = format!(
            "{}\n{}\n{}{}",
            candidate.name,
            candidate.description,
            candidate.triggers.iter().map(|t| format!("{t}\n")).collect::<String>(),
            candidate.prompt
        );
        assert_eq!(text, expected_text);
        let q = gen::embedding(&mut rng, DIM);
        let (neighbors, best) = nearest_neighbors(&text, &q, &bank.candidates(), 0.7, 5, &bm25).unwrap();
        let rows = oracle::rank(&text, &q, &bank.oracle_docs(), 0.7, bm25.k1, bm25.b);
        assert_eq!(best.unwrap().id.to_string(), oracle::argmax(&rows).unwrap());
        assert_eq!(neighbors.len(), rows.len().min(5));
        assert_matches_oracle(&neighbors, &rows[..neighbors.len()]);
    }
}

#[test]
fn twelve_skill_bank_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let skills: Vec<Skill> = (0..12).map(|_| gen::skill(&mut rng)).collect();
    let docs: Vec<String> = skills
        .iter()
        .map(|s| skill_document(s, DocumentFields::default()))
        .collect();
    let embeddings: Vec<Vec<f32>> = (0..12).map(|_| gen::embedding(&mut rng, DIM)).collect();
    let bank = Bank {
        skills,
        docs,
        embeddings,
    };
    let candidate = gen::candidate(&mut rng);
    let text = candidate_query(&candidate);
    let q = gen::embedding(&mut rng, DIM);
    let (_, best) = nearest_neighbors(&text, &q, &bank.candidates(), 0.7, 5, &Bm25Params::default()).unwrap();
    let rows = oracle::rank(&text, &q, &bank.oracle_docs(), 0.7, 1.2, 0.75);
    assert_eq!(best.unwrap().id.to_string(), oracle::argmax(&rows).unwrap());
}

#[test]
fn single_doc_bm25_matches_hand_formula() {
    // N = 1: every matching term has df = 1 and idf = max(0, ln(0.5/1.5)) = 0.
    let got = oracle::bm25_all("rewrite this text", &["rewrite this text"], 1.2, 0.75);
    assert_eq!(got, vec![0.0]);
    let skill_text = "rewrite this text";
    let emb = [1.0f32, 0.0];
    let ranked = hybrid_rank(
        "rewrite this text",
        &[1.0, 0.0],
        &[RankCandidate {
            id: uuid::Uuid::nil(),
            text: skill_text,
            embedding: &emb,
        }],
        0.5,
        &Bm25Params::default(),
    )
    .unwrap();
    assert_eq!(ranked[0].lexical_raw, 0.0);
}

#[test]
fn three_doc_bm25_by_hand() {
    // docs: "a b" / "a c" / "d"; query "b". N=3, df(b)=1, avgdl=5/3.
    let idf = ((3.0f64 - 1.0 + 0.5) / (1.0 + 0.5)).ln();
    let norm = 1.2 * (1.0 - 0.75 + 0.75 * (2.0 / (5.0 / 3.0)));
    let expected = idf * 1.0 * 2.2 / (1.0 + norm);
    let got = oracle::bm25_all("b", &["a b", "a c", "d"], 1.2, 0.75);
    assert!((got[0] - expected).abs() < 1e-12);
    assert_eq!(&got[1..], &[0.0, 0.0]);

    let embs = [[1.0f32, 0.0], [1.0, 0.0], [1.0, 0.0]];
    let texts = ["a b", "a c", "d"];
    let cands: Vec<RankCandidate<'_>> = (0..3)
        .map(|i| RankCandidate {
            id: uuid::Uuid::from_u128(i as u128 + 1),
            text: texts[i],
            embedding: &embs[i],
        })
        .collect();
    let ranked = hybrid_rank("b", &[1.0, 0.0], &cands, 0.0, &Bm25Params::default()).unwrap();
    assert!((ranked[0].lexical_raw - expected).abs() < 1e-12);
    assert_eq!(ranked[0].id, uuid::Uuid::from_u128(1));
}

#[test]
fn boundary_weights_reproduce_single_signal_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let bm25 = Bm25Params::default();
    for _ in 0..50 {
        let bank = Bank::random(&mut rng);
        let query = gen::phrase(&mut rng, 1, 5);
        let q = gen::embedding(&mut rng, DIM);
        let sort_by = |key: &dyn Fn(&ScoredSkill) -> f64, xs: &[ScoredSkill]| {
            let mut ids: Vec<(f64, f64, uuid::Uuid)> = xs.iter().map(|s| (key(s), s.dense_raw, s.id)).collect();
            ids.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
            ids.into_iter().map(|x| x.2).collect::<Vec<_>>()
        };
        let dense_only = hybrid_rank(&query, &q, &bank.candidates(), 1.0, &bm25).unwrap();
        let got: Vec<_> = dense_only.iter().map(|s| s.id).collect();
        assert_eq!(got, sort_by(&|s| s.dense_norm, &dense_only));
        assert!(dense_only.iter().all(|s| s.rel == s.dense_norm));

        let lexical_only = hybrid_rank(&query, &q, &bank.candidates(), 0.0, &bm25).unwrap();
        let got: Vec<_> = lexical_only.iter().map(|s| s.id).collect();
        assert_eq!(got, sort_by(&|s| s.lexical_raw, &lexical_only));
        assert!(lexical_only.iter().all(|s| s.rel == s.lexical_norm));
    }
}

#[test]
fn threshold_and_k_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let bm25 = Bm25Params::default();
    for _ in 0..50 {
        let bank = Bank::random(&mut rng);
        let query = gen::phrase(&mut rng, 1, 5);
        let q = gen::embedding(&mut rng, DIM);
        let ranked = hybrid_rank(&query, &q, &bank.candidates(), 0.7, &bm25).unwrap();
        for k in 1..=5 {
            let mut last = usize::MAX;
            for step in 0..=20 {
                let eta = step as f64 / 20.0;
                let n = select_topk_threshold(&ranked, k, eta).len();
                assert!(n <= last);
                last = n;
            }
        }
        for step in 0..=20 {
            let eta = step as f64 / 20.0;
            let mut last = 0;
            for k in 1..=25 {
                let n = select_topk_threshold(&ranked, k, eta).len();
                assert!(n >= last);
                last = n;
            }
        }
    }
}

#[test]
fn fused_scores_are_bounded_and_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let bank = Bank::random(&mut rng);
        let query = gen::phrase(&mut rng, 1, 5);
        let q = gen::embedding(&mut rng, DIM);
        let w = rng.random_range(0.0..=1.0);
        for s in hybrid_rank(&query, &q, &bank.candidates(), w, &Bm25Params::default()).unwrap() {
            assert!((0.0..=1.0).contains(&s.rel));
            assert!((s.rel - (w * s.dense_norm + (1.0 - w) * s.lexical_norm)).abs() <= 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn minmax_stays_in_unit_interval(xs in prop::collection::vec(-1e6f64..1e6, 1..40), equal in any::<bool>()) {
        let xs = if equal { vec![xs[0]; xs.len()] } else { xs };
        for x in minmax_normalize(&xs).unwrap() {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn ranking_ignores_input_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = Bank::random(&mut rng);
        let query = gen::phrase(&mut rng, 1, 5);
        let q = gen::embedding(&mut rng, DIM);
        let forward = hybrid_rank(&query, &q, &bank.candidates(), 0.7, &Bm25Params::default()).unwrap();
        let mut reversed = bank.candidates();
        reversed.reverse();
        let backward = hybrid_rank(&query, &q, &reversed, 0.7, &Bm25Params::default()).unwrap();
        let ids = |v: &[ScoredSkill]| v.iter().map(|s| s.id).collect::<Vec<_>>();
        prop_assert_eq!(ids(&forward), ids(&backward));
    }
}
