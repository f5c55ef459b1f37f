//! Seeded random banks and queries for oracle comparisons.

#![allow(dead_code)]

use autoskill_core::skill::{Skill, SkillCandidate};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use uuid::Uuid;

pub const VOCAB: &[&str] = &[
    "rewrite",
    "text",
    "email",
    "formal",
    "polish",
    "python",
    "excel",
    "budget",
    "travel",
    "plan",
    "summary",
    "report",
    "tone",
    "draft",
    "press",
    "release",
    "linkedin",
    "post",
    "resume",
    "cover",
    "letter",
    "sql",
    "query",
    "chart",
    "Translate",
    "Chinese",
    "code",
    "review",
    "bug",
    "fix",
];

pub fn phrase(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random non-zero vector.
pub fn embedding(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

pub fn id(rng: &mut impl RngCore) -> Uuid {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}

pub fn candidate(rng: &mut impl Rng) -> SkillCandidate {
    let mut triggers: Vec<String> = (0..rng.random_range(0..=3)).map(|_| phrase(rng, 1, 4)).collect();
    triggers.dedup();
    let mut tags: Vec<String> = (0..rng.random_range(0..=3)).map(|_| phrase(rng, 1, 1)).collect();
    tags.sort();
    tags.dedup();
    SkillCandidate {
        name: phrase(rng, 1, 3),
        description: phrase(rng, 0, 8),
        prompt: format!(
            "# Goal\n{}\n\n# Constraints & Style\n- {}",
            phrase(rng, 1, 10),
            phrase(rng, 1, 5)
        ),
        triggers,
        tags,
        examples: vec![],
        confidence: rng.random_range(0.0..=1.0),
    }
}

pub fn skill(rng: &mut impl Rng) -> Skill {
    let c = candidate(rng);
    Skill::from_candidate(id(rng), &c)
}
