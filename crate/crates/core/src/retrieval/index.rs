use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use uuid::Uuid;

use super::{skill_document, DocumentFields, RankCandidate};
use crate::bank::{BankError, BankScope, BankWarning, CacheEntry, Metric, SkillBank, VectorCacheMeta};
use crate::llm::{normalize, BackendError, EmbeddingBackend};
use crate::skill::Skill;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("embedding failed: {0}")]
    Embedding(#[from] BackendError),
    #[error("embedding backend returned {got} vectors of dimension {dimension}, expected {expected}")]
    BadEmbedding {
        expected: usize,
        got: usize,
        dimension: usize,
    },
}

/// A skill with the text it is matched on and its unit-length embedding.
#[derive(Debug, Clone)]
pub struct IndexedSkill {
    pub scope: BankScope,
    pub slug: String,
    pub skill: Skill,
    pub document: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Default)]
struct ScopePart {
    skills: Vec<IndexedSkill>,
    warnings: Vec<BankWarning>,
}

/// Immutable view of one or more scopes. Turns keep the snapshot they
/// started with even if the bank changes underneath.
#[derive(Debug, Clone, Default)]
pub struct SkillSnapshot {
    parts: Vec<Arc<ScopePart>>,
}

impl SkillSnapshot {
    pub fn iter(&self) -> impl Iterator<Item = &IndexedSkill> {
        self.parts.iter().flat_map(|p| p.skills.iter())
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.skills.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &Uuid) -> Option<&IndexedSkill> {
        self.iter().find(|s| &s.skill.id == id)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &BankWarning> {
        self.parts.iter().flat_map(|p| p.warnings.iter())
    }

    pub fn rank_candidates(&self) -> Vec<RankCandidate<'_>> {
        self.iter()
            .map(|s| RankCandidate {
                id: s.skill.id,
                text: &s.document,
                embedding: &s.embedding,
            })
            .collect()
    }
}

/// Cache name for a scope under an embedding model.
pub fn cache_name(scope: &BankScope, model: &str) -> String {
    let model: String = model
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{}--{}", scope.cache_prefix(), model.trim_start_matches('.'))
}

/// Per-scope embedding index over the bank, backed by the on-disk vector
/// caches. Rows are re-embedded only when their skill version changed.
pub struct SkillIndex {
    bank: Arc<SkillBank>,
    embedder: Arc<dyn EmbeddingBackend>,
    fields: DocumentFields,
    published: Mutex<HashMap<BankScope, Arc<ScopePart>>>,
    build: tokio::sync::Mutex<()>,
}

impl SkillIndex {
    pub fn new(bank: Arc<SkillBank>, embedder: Arc<dyn EmbeddingBackend>, fields: DocumentFields) -> Self {
        Self {
            bank,
            embedder,
            fields,
            published: Mutex::default(),
            build: tokio::sync::Mutex::new(()),
        }
    }

    pub fn bank(&self) -> &Arc<SkillBank> {
        &self.bank
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingBackend> {
        &self.embedder
    }

    pub fn fields(&self) -> DocumentFields {
        self.fields
    }

    /// Drop the published view of `scope`; the next snapshot rebuilds it.
    pub fn invalidate(&self, scope: &BankScope) {
        self.published.lock().expect("index poisoned").remove(scope);
    }

    pub async fn snapshot(&self, scopes: &[BankScope]) -> Result<SkillSnapshot, IndexError> {
        let mut parts = Vec::with_capacity(scopes.len());
        for scope in scopes {
            parts.push(self.part(scope).await?);
        }
        Ok(SkillSnapshot { parts })
    }

    /// Embed arbitrary texts with the index's backend, unit length.
    pub async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, IndexError> {
        let rows = self.embedder.embed(texts).await?;
        let dimension = self.embedder.dimension();
        if rows.len() != texts.len() || rows.iter().any(|r| r.len() != dimension) {
            return Err(IndexError::BadEmbedding {
                expected: texts.len(),
                got: rows.len(),
                dimension: rows.iter().map(Vec::len).find(|&d| d != dimension).unwrap_or(dimension),
            });
        }
        Ok(rows.into_iter().map(normalize).collect())
    }

    async fn part(&self, scope: &BankScope) -> Result<Arc<ScopePart>, IndexError> {
        if let Some(part) = self.published.lock().expect("index poisoned").get(scope) {
            return Ok(part.clone());
        }
        let _build = self.build.lock().await;
        if let Some(part) = self.published.lock().expect("index poisoned").get(scope) {
            return Ok(part.clone());
        }
        let part = Arc::new(self.rebuild(scope).await?);
        self.published
            .lock()
            .expect("index poisoned")
            .insert(scope.clone(), part.clone());
        Ok(part)
    }

    async fn rebuild(&self, scope: &BankScope) -> Result<ScopePart, IndexError> {
        let listing = self.bank.list_skills(scope)?;
        let model = self.embedder.model().to_string();
        let dimension = self.embedder.dimension();
        let name = cache_name(scope, &model);

        let cached = match self.bank.load_vector_cache(&name) {
            Ok(Some(cache)) if cache.meta.embedding_model == model && cache.meta.dimension == dimension => Some(cache),
            Ok(_) => None,
            Err(e) => {
                tracing::warn!(cache = %name, error = %e, "discarding unreadable vector cache");
                None
            }
        };
        let mut reusable: HashMap<&str, (usize, &CacheEntry)> = HashMap::new();
        if let Some(cache) = &cached {
            for (i, entry) in cache.entries.iter().enumerate() {
                reusable.insert(entry.id.as_str(), (i, entry));
            }
        }

        let ids: Vec<String> = listing.skills.iter().map(|s| s.skill.id.to_string()).collect();
        let documents: Vec<String> = listing
            .skills
            .iter()
            .map(|s| skill_document(&s.skill, self.fields))
            .collect();
        let mut embeddings: Vec<Option<Vec<f32>>> = vec![None; listing.skills.len()];
        let mut stale = Vec::new();
        for (i, stored) in listing.skills.iter().enumerate() {
            match (reusable.get(ids[i].as_str()), &cached) {
                (Some((row, entry)), Some(cache)) if entry.version == Some(stored.skill.version) => {
                    embeddings[i] = Some(cache.row(*row).to_vec());
                }
                _ => stale.push(i),
            }
        }

        if !stale.is_empty() {
            let texts: Vec<String> = stale.iter().map(|&i| documents[i].clone()).collect();
            let fresh = self.embed(&texts).await?;
            for (&i, vector) in stale.iter().zip(fresh) {
                embeddings[i] = Some(vector);
            }
        }

        let entries: Vec<CacheEntry> = listing
            .skills
            .iter()
            .map(|s| CacheEntry {
                id: s.skill.id.to_string(),
                version: Some(s.skill.version),
            })
            .collect();
        let unchanged = cached.as_ref().is_some_and(|c| c.entries == entries);
        if !unchanged && !(cached.is_none() && entries.is_empty()) {
            let vectors: Vec<f32> = embeddings.iter().flatten().flatten().copied().collect();
            let meta = VectorCacheMeta {
                embedding_model: model,
                dimension,
                count: entries.len(),
                metric: Metric::Cosine,
            };
            self.bank.save_vector_cache(&name, &meta, &entries, &vectors)?;
        }

        let skills = listing
            .skills
            .into_iter()
            .zip(documents)
            .zip(embeddings)
            .map(|((stored, document), embedding)| IndexedSkill {
                scope: scope.clone(),
                slug: stored.slug,
                skill: stored.skill,
                document,
                embedding: embedding.expect("every row embedded"),
            })
            .collect();
        Ok(ScopePart {
            skills,
            warnings: listing.warnings,
        })
    }
}
