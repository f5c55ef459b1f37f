//! On-disk skill storage.
//!
//! Layout under the bank root:
//!
//! ```text
//! Users/<user_id>/<skill-slug>/SKILL.md
//! Common/<skill-slug>/SKILL.md
//! vectors/<cache>.meta.json | .ids.txt | .vecs.f32
//! ```

mod vectors;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use uuid::Uuid;

use crate::skill::{parse_skill_md, serialize_skill_md, slugify, Skill, SkillInvariant, SkillParseError};

pub use vectors::{CacheEntry, Metric, VectorCache, VectorCacheMeta};

pub const ROOT_ENV: &str = "AUTOSKILL_BANK_ROOT";
pub const DEFAULT_ROOT: &str = "SkillBank";
pub const SKILL_FILE: &str = "SKILL.md";
const USERS_DIR: &str = "Users";
const COMMON_DIR: &str = "Common";
const VECTORS_DIR: &str = "vectors";

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scope: {0}")]
    ScopeInvalid(String),
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: SkillParseError,
    },
    #[error("skill violates invariant: {0}")]
    InvalidSkill(#[from] SkillInvariant),
    #[error("invalid vector cache name {0:?}")]
    InvalidCacheName(String),
    #[error("vector cache shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inconsistent vector cache, {file} disagrees: {reason}")]
    InconsistentCache { file: PathBuf, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BankError + '_ {
    move |source| BankError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Map an externally supplied user name onto a directory-safe user id
/// using the slug rules. `None` when nothing usable is left.
pub fn normalize_user_id(raw: &str) -> Option<String> {
    let raw = raw.trim();
    raw.chars()
        .any(char::is_alphanumeric)
        .then(|| slugify(raw, &Uuid::nil()))
}

/// Which part of the bank an operation addresses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BankScope {
    User(String),
    Common,
}

impl BankScope {
    pub fn user(user_id: impl Into<String>) -> Result<Self, BankError> {
        let user_id = user_id.into();
        let bad = user_id.is_empty() || user_id == "." || user_id == ".." || user_id.contains(['/', '\\', '\0']);
        if bad {
            return Err(BankError::ScopeInvalid(format!("user id {user_id:?}")));
        }
        Ok(Self::User(user_id))
    }

    fn relative_dir(&self) -> PathBuf {
        match self {
            Self::User(id) => Path::new(USERS_DIR).join(id),
            Self::Common => PathBuf::from(COMMON_DIR),
        }
    }

    fn check(&self) -> Result<(), BankError> {
        match self {
            Self::User(id) => Self::user(id.clone()).map(|_| ()),
            Self::Common => Ok(()),
        }
    }

    /// Prefix used for this scope's vector cache names.
    pub fn cache_prefix(&self) -> String {
        match self {
            Self::User(id) => format!("users--{id}"),
            Self::Common => "common".to_string(),
        }
    }
}

impl fmt::Display for BankScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::User(id) => write!(f, "user:{id}"),
            Self::Common => f.write_str("common"),
        }
    }
}

/// A skill together with the directory it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSkill {
    pub slug: String,
    pub skill: Skill,
}

#[derive(Debug, Clone)]
pub struct BankWarning {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct SkillListing {
    pub skills: Vec<StoredSkill>,
    pub warnings: Vec<BankWarning>,
}

type ScopeIndex = HashMap<Uuid, String>;

/// Persistent per-user and shared skill store.
#[derive(Debug)]
pub struct SkillBank {
    root: PathBuf,
    index: RwLock<HashMap<BankScope, ScopeIndex>>,
    writers: Mutex<HashMap<BankScope, Arc<Mutex<()>>>>,
    caches: RwLock<()>,
}

impl SkillBank {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            index: RwLock::default(),
            writers: Mutex::default(),
            caches: RwLock::new(()),
        }
    }

    /// `$AUTOSKILL_BANK_ROOT`, or `./SkillBank`.
    pub fn default_root() -> PathBuf {
        std::env::var_os(ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn scope_dir(&self, scope: &BankScope) -> PathBuf {
        self.root.join(scope.relative_dir())
    }

    fn writer(&self, scope: &BankScope) -> Arc<Mutex<()>> {
        let mut writers = self.writers.lock().expect("writer map poisoned");
        writers.entry(scope.clone()).or_default().clone()
    }

    /// Write `skill` under `scope`, replacing any artifact with the same id.
    pub fn put_skill(&self, scope: &BankScope, skill: &Skill) -> Result<PathBuf, BankError> {
        scope.check()?;
        skill.validate()?;
        let writer = self.writer(scope);
        let _guard = writer.lock().expect("scope writer poisoned");

        let scope_dir = self.scope_dir(scope);
        fs::create_dir_all(&scope_dir).map_err(io_err(&scope_dir))?;
        let (index, _) = self.rescan(scope)?;

        let slug = match index.get(&skill.id) {
            Some(slug) if scope_dir.join(slug).is_dir() => slug.clone(),
            _ => {
                let taken = existing_dirs(&scope_dir)?;
                let base = slugify(&skill.name, &skill.id);
                let mut slug = base.clone();
                let mut n = 2;
                while taken.contains(&slug) {
                    slug = format!("{base}-{n}");
                    n += 1;
                }
                slug
            }
        };

        let dir = scope_dir.join(&slug);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(SKILL_FILE);
        write_atomic(&path, serialize_skill_md(skill).as_bytes())?;

        self.index
            .write()
            .expect("index poisoned")
            .entry(scope.clone())
            .or_default()
            .insert(skill.id, slug);
        Ok(path)
    }

    pub fn get_skill(&self, scope: &BankScope, id: &Uuid) -> Result<Option<Skill>, BankError> {
        scope.check()?;
        let known = self.indexed_slug(scope, id);
        let slug = match known {
            Some(slug) => Some(slug),
            None => self.rescan(scope)?.0.get(id).cloned(),
        };
        let Some(slug) = slug else {
            return Ok(None);
        };
        let path = self.scope_dir(scope).join(&slug).join(SKILL_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.forget(scope, id);
                return Ok(None);
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let skill = parse_skill_md(&text).map_err(|source| BankError::Parse {
            path: path.clone(),
            source,
        })?;
        if skill.id != *id {
            // The directory was reused by a different skill since indexing.
            self.forget(scope, id);
            return match self.rescan(scope)?.0.get(id) {
                Some(_) => self.get_skill(scope, id),
                None => Ok(None),
            };
        }
        Ok(Some(skill))
    }

    /// Every parseable skill in `scope`, sorted by slug. Unparseable
    /// artifacts are skipped and reported as warnings.
    pub fn list_skills(&self, scope: &BankScope) -> Result<SkillListing, BankError> {
        scope.check()?;
        let (_, listing) = self.rescan(scope)?;
        Ok(listing)
    }

    pub fn delete_skill(&self, scope: &BankScope, id: &Uuid) -> Result<bool, BankError> {
        scope.check()?;
        let writer = self.writer(scope);
        let _guard = writer.lock().expect("scope writer poisoned");
        let Some(slug) = self.rescan(scope)?.0.get(id).cloned() else {
            return Ok(false);
        };
        let dir = self.scope_dir(scope).join(slug);
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        self.forget(scope, id);
        Ok(true)
    }

    /// Directory holding the artifact for `id`, if stored.
    pub fn artifact_dir(&self, scope: &BankScope, id: &Uuid) -> Result<Option<PathBuf>, BankError> {
        scope.check()?;
        let slug = match self.indexed_slug(scope, id) {
            Some(slug) => Some(slug),
            None => self.rescan(scope)?.0.get(id).cloned(),
        };
        Ok(slug.map(|slug| self.scope_dir(scope).join(slug)))
    }

    /// Co-located resource files (`scripts/`, `references/`, `assets/`, ...)
    /// relative to the artifact directory. They are never interpreted.
    pub fn list_resources(&self, scope: &BankScope, id: &Uuid) -> Result<Vec<PathBuf>, BankError> {
        let Some(dir) = self.artifact_dir(scope, id)? else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        collect_files(&dir, &dir, &mut out)?;
        out.retain(|p| p != Path::new(SKILL_FILE));
        out.sort();
        Ok(out)
    }

    /// User ids that have a directory under `Users/`.
    pub fn list_users(&self) -> Result<Vec<String>, BankError> {
        let dir = self.root.join(USERS_DIR);
        let mut users: Vec<String> = existing_dirs(&dir)?.into_iter().collect();
        users.sort();
        Ok(users)
    }

    fn indexed_slug(&self, scope: &BankScope, id: &Uuid) -> Option<String> {
        self.index
            .read()
            .expect("index poisoned")
            .get(scope)
            .and_then(|index| index.get(id))
            .cloned()
    }

    fn forget(&self, scope: &BankScope, id: &Uuid) {
        if let Some(index) = self.index.write().expect("index poisoned").get_mut(scope) {
            index.remove(id);
        }
    }

    /// Re-reads every artifact under `scope` and refreshes the id index.
    /// Index entries pointing at artifacts that no longer parse are kept, so
    /// a later `get_skill` can report the corrupted file.
    fn rescan(&self, scope: &BankScope) -> Result<(ScopeIndex, SkillListing), BankError> {
        let scope_dir = self.scope_dir(scope);
        let mut listing = SkillListing::default();
        let mut slugs: Vec<String> = existing_dirs(&scope_dir)?.into_iter().collect();
        slugs.sort();
        let mut broken = HashSet::new();
        for slug in slugs {
            let path = scope_dir.join(&slug).join(SKILL_FILE);
            let text = match fs::read_to_string(&path) {
                Ok(text) => text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => {
                    listing.warnings.push(BankWarning {
                        path,
                        message: e.to_string(),
                    });
                    broken.insert(slug);
                    continue;
                }
            };
            match parse_skill_md(&text) {
                Ok(skill) => listing.skills.push(StoredSkill { slug, skill }),
                Err(e) => {
                    tracing::warn!(path = %path.display(), error = %e, "skipping unparseable skill");
                    listing.warnings.push(BankWarning {
                        path,
                        message: e.to_string(),
                    });
                    broken.insert(slug);
                }
            }
        }

        let mut index: ScopeIndex = HashMap::new();
        let mut guard = self.index.write().expect("index poisoned");
        if let Some(previous) = guard.get(scope) {
            for (id, slug) in previous {
                if broken.contains(slug) {
                    index.insert(*id, slug.clone());
                }
            }
        }
        for stored in &listing.skills {
            index.insert(stored.skill.id, stored.slug.clone());
        }
        guard.insert(scope.clone(), index.clone());
        Ok((index, listing))
    }
}

fn existing_dirs(dir: &Path) -> Result<HashSet<String>, BankError> {
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut out = HashSet::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                out.insert(name.to_string());
            }
        }
    }
    Ok(out)
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), BankError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if entry.file_type().map_err(io_err(&path))?.is_dir() {
            collect_files(base, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(base) {
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

/// Write through a temp file in the same directory, then rename over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BankError> {
    let tmp = staged(path, bytes)?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Stage `bytes` in a synced temp file next to `path` without renaming yet.
pub(crate) fn staged(path: &Path, bytes: &[u8]) -> Result<tempfile::NamedTempFile, BankError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    Ok(tmp)
}
