use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{io_err, staged, BankError, SkillBank, VECTORS_DIR};
use crate::skill::SemVer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorCacheMeta {
    pub embedding_model: String,
    pub dimension: usize,
    pub count: usize,
    pub metric: Metric,
}

/// One line of `<cache>.ids.txt`: `id<TAB>version`, the version being the
/// skill version the row was embedded at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub id: String,
    pub version: Option<SemVer>,
}

impl CacheEntry {
    fn to_line(&self) -> String {
        match &self.version {
            Some(v) => format!("{}\t{v}", self.id),
            None => self.id.clone(),
        }
    }

    fn from_line(line: &str) -> Self {
        match line.split_once('\t') {
            Some((id, version)) => Self {
                id: id.to_string(),
                version: version.parse().ok(),
            },
            None => Self {
                id: line.to_string(),
                version: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorCache {
    pub meta: VectorCacheMeta,
    pub entries: Vec<CacheEntry>,
    /// Row-major, `meta.count` rows of `meta.dimension` values.
    pub vectors: Vec<f32>,
}

impl VectorCache {
    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.meta.dimension;
        &self.vectors[i * d..(i + 1) * d]
    }
}

struct CachePaths {
    meta: PathBuf,
    ids: PathBuf,
    vecs: PathBuf,
}

impl SkillBank {
    fn cache_paths(&self, cache_name: &str) -> Result<CachePaths, BankError> {
        let bad = cache_name.is_empty() || cache_name.starts_with('.') || cache_name.contains(['/', '\\', '\0']);
        if bad {
            return Err(BankError::InvalidCacheName(cache_name.to_string()));
        }
        let dir = self.root.join(VECTORS_DIR);
        Ok(CachePaths {
            meta: dir.join(format!("{cache_name}.meta.json")),
            ids: dir.join(format!("{cache_name}.ids.txt")),
            vecs: dir.join(format!("{cache_name}.vecs.f32")),
        })
    }

    /// Replace the named cache wholesale.
    ///
    /// All three files are staged first and renamed afterwards, metadata
    /// last; readers in this process are excluded for the duration.
    pub fn save_vector_cache(
        &self,
        cache_name: &str,
        meta: &VectorCacheMeta,
        entries: &[CacheEntry],
        vectors: &[f32],
    ) -> Result<(), BankError> {
        let paths = self.cache_paths(cache_name)?;
        if meta.dimension == 0 {
            return Err(BankError::ShapeMismatch("dimension must be positive".into()));
        }
        if entries.len() != meta.count {
            return Err(BankError::ShapeMismatch(format!(
                "{} ids for count {}",
                entries.len(),
                meta.count
            )));
        }
        if vectors.len() != meta.count * meta.dimension {
            return Err(BankError::ShapeMismatch(format!(
                "{} values for {} rows of dimension {}",
                vectors.len(),
                meta.count,
                meta.dimension
            )));
        }
        if let Some(entry) = entries.iter().find(|e| e.id.contains(['\n', '\t'])) {
            return Err(BankError::ShapeMismatch(format!(
                "id {:?} contains a separator",
                entry.id
            )));
        }

        let dir = paths.meta.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let mut ids = String::new();
        for entry in entries {
            ids.push_str(&entry.to_line());
            ids.push('\n');
        }
        let mut vecs = Vec::with_capacity(vectors.len() * 4);
        for v in vectors {
            vecs.extend_from_slice(&v.to_le_bytes());
        }
        let mut meta_json = serde_json::to_string_pretty(meta).expect("meta serializes");
        meta_json.push('\n');

        let _guard = self.caches.write().expect("cache lock poisoned");
        let staged_vecs = staged(&paths.vecs, &vecs)?;
        let staged_ids = staged(&paths.ids, ids.as_bytes())?;
        let staged_meta = staged(&paths.meta, meta_json.as_bytes())?;
        for (tmp, path) in [
            (staged_vecs, &paths.vecs),
            (staged_ids, &paths.ids),
            (staged_meta, &paths.meta),
        ] {
            tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
        }
        Ok(())
    }

    /// Load and cross-check the named cache. Absent when no file of the set
    /// exists.
    pub fn load_vector_cache(&self, cache_name: &str) -> Result<Option<VectorCache>, BankError> {
        let paths = self.cache_paths(cache_name)?;
        let _guard = self.caches.read().expect("cache lock poisoned");

        let meta_bytes = read_optional(&paths.meta)?;
        let ids_bytes = read_optional(&paths.ids)?;
        let vec_bytes = read_optional(&paths.vecs)?;
        if meta_bytes.is_none() && ids_bytes.is_none() && vec_bytes.is_none() {
            return Ok(None);
        }
        let inconsistent = |file: &PathBuf, reason: String| BankError::InconsistentCache {
            file: file.clone(),
            reason,
        };
        let meta_bytes = meta_bytes.ok_or_else(|| inconsistent(&paths.meta, "missing".into()))?;
        let ids_bytes = ids_bytes.ok_or_else(|| inconsistent(&paths.ids, "missing".into()))?;
        let vec_bytes = vec_bytes.ok_or_else(|| inconsistent(&paths.vecs, "missing".into()))?;

        let meta: VectorCacheMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| inconsistent(&paths.meta, format!("invalid metadata: {e}")))?;
        if meta.dimension == 0 {
            return Err(inconsistent(&paths.meta, "dimension is zero".into()));
        }

        let ids_text = String::from_utf8(ids_bytes).map_err(|_| inconsistent(&paths.ids, "not UTF-8".into()))?;
        let entries: Vec<CacheEntry> = ids_text.lines().map(CacheEntry::from_line).collect();
        if entries.len() != meta.count {
            return Err(inconsistent(
                &paths.ids,
                format!("{} lines but meta.count is {}", entries.len(), meta.count),
            ));
        }

        let expected = meta.count * meta.dimension * 4;
        if vec_bytes.len() != expected {
            return Err(inconsistent(
                &paths.vecs,
                format!("{} bytes, expected {expected}", vec_bytes.len()),
            ));
        }
        let vectors = vec_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Some(VectorCache { meta, entries, vectors }))
    }
}

fn read_optional(path: &PathBuf) -> Result<Option<Vec<u8>>, BankError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(count: usize, dimension: usize) -> VectorCacheMeta {
        VectorCacheMeta {
            embedding_model: "mock-hash".into(),
            dimension,
            count,
            metric: Metric::Cosine,
        }
    }

    fn entries(n: usize) -> Vec<CacheEntry> {
        (0..n)
            .map(|i| CacheEntry {
                id: format!("id-{i}"),
                version: Some(SemVer::new(0, 1, i as u64)),
            })
            .collect()
    }

    #[test]
    fn file_sizes_and_formats() {
        let tmp = tempfile::tempdir().unwrap();
        let bank = SkillBank::open(tmp.path());
        let vectors: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
        bank.save_vector_cache("users--alice--mock", &meta(3, 4), &entries(3), &vectors)
            .unwrap();
        let dir = tmp.path().join("vectors");
        assert_eq!(fs::metadata(dir.join("users--alice--mock.vecs.f32")).unwrap().len(), 48);
        assert_eq!(
            fs::read_to_string(dir.join("users--alice--mock.ids.txt")).unwrap(),
            "id-0\t0.1.0\nid-1\t0.1.1\nid-2\t0.1.2\n"
        );
        let meta_json: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join("users--alice--mock.meta.json")).unwrap()).unwrap();
        assert_eq!(
            meta_json,
            serde_json::json!({"embedding_model": "mock-hash", "dimension": 4, "count": 3, "metric": "cosine"})
        );
        let raw = fs::read(dir.join("users--alice--mock.vecs.f32")).unwrap();
        assert_eq!(&raw[4..8], &0.5f32.to_le_bytes());
    }

    #[test]
    fn empty_cache() {
        let tmp = tempfile::tempdir().unwrap();
        let bank = SkillBank::open(tmp.path());
        bank.save_vector_cache("c", &meta(0, 8), &[], &[]).unwrap();
        let dir = tmp.path().join("vectors");
        assert_eq!(fs::read(dir.join("c.ids.txt")).unwrap().len(), 0);
        assert_eq!(fs::read(dir.join("c.vecs.f32")).unwrap().len(), 0);
        let loaded = bank.load_vector_cache("c").unwrap().unwrap();
        assert_eq!(loaded.meta.count, 0);
        assert!(loaded.entries.is_empty());
    }

    #[test]
    fn missing_cache_is_absent() {
        let tmp = tempfile::tempdir().unwrap();
        let bank = SkillBank::open(tmp.path());
        assert_eq!(bank.load_vector_cache("nothing").unwrap(), None);
    }

    #[test]
    fn truncated_ids_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let bank = SkillBank::open(tmp.path());
        bank.save_vector_cache("c", &meta(3, 2), &entries(3), &[0.0; 6])
            .unwrap();
        let ids = tmp.path().join("vectors/c.ids.txt");
        fs::write(&ids, "id-0\t0.1.0\nid-1\t0.1.1\n").unwrap();
        match bank.load_vector_cache("c") {
            Err(BankError::InconsistentCache { file, .. }) => assert_eq!(file, ids),
            other => panic!("expected inconsistency, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_on_save() {
        let tmp = tempfile::tempdir().unwrap();
        let bank = SkillBank::open(tmp.path());
        assert!(matches!(
            bank.save_vector_cache("c", &meta(2, 2), &entries(3), &[0.0; 4]),
            Err(BankError::ShapeMismatch(_))
        ));
        assert!(matches!(
            bank.save_vector_cache("c", &meta(2, 2), &entries(2), &[0.0; 5]),
            Err(BankError::ShapeMismatch(_))
        ));
        assert!(matches!(
            bank.save_vector_cache("../c", &meta(0, 2), &[], &[]),
            Err(BankError::InvalidCacheName(_))
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let bank = SkillBank::open(tmp.path());
        let vectors = vec![f32::MIN_POSITIVE, -0.0, 1.0e-38, f32::MAX, -1.5, 0.1];
        bank.save_vector_cache("c", &meta(2, 3), &entries(2), &vectors).unwrap();
        let loaded = bank.load_vector_cache("c").unwrap().unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&loaded.vectors), bits(&vectors));
        assert_eq!(loaded.entries, entries(2));
        assert_eq!(loaded.row(1), &vectors[3..6]);
    }
}
