//! Export a scope as plain files and import skill artifacts back.

use std::fs;
use std::path::{Path, PathBuf};

use autoskill_core::bank::{BankScope, SkillBank, SKILL_FILE};
use autoskill_core::skill::parse_skill_md;
use serde::Serialize;
use uuid::Uuid;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} exists and is not an empty directory")]
    NotEmpty(PathBuf),
    #[error("{0}")]
    Bank(#[from] autoskill_core::bank::BankError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<usize, ArchiveError> {
    let mut files = 0;
    for entry in walkdir::WalkDir::new(from).sort_by_file_name() {
        let entry = entry.map_err(|e| ArchiveError::Io {
            path: from.to_path_buf(),
            source: e.into(),
        })?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(io_err(&target))?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target).map_err(io_err(&target))?;
            files += 1;
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportReport {
    pub scope: String,
    pub out: PathBuf,
    pub artifacts: usize,
    pub files: usize,
}

/// Copy the scope's directory tree verbatim into `out`, which must not
/// exist yet or be empty.
pub fn export(bank: &SkillBank, scope: &BankScope, out: &Path) -> Result<ExportReport, ArchiveError> {
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out).map_err(io_err(out))?.next().is_none();
        if !empty {
            return Err(ArchiveError::NotEmpty(out.to_path_buf()));
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let src = bank.scope_dir(scope);
    let files = if src.is_dir() { copy_tree(&src, out)? } else { 0 };
    Ok(ExportReport {
        scope: scope.to_string(),
        out: out.to_path_buf(),
        artifacts: find_artifacts(out)?.len(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Imported {
    pub source: PathBuf,
    pub id: Uuid,
    pub name: String,
    /// The archive's id when it collided and a fresh one was assigned.
    pub replaced_id: Option<Uuid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejected {
    pub source: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub imported: Vec<Imported>,
    pub rejected: Vec<Rejected>,
}

impl ImportReport {
    pub fn render(&self) -> String {
        let mut out = format!("imported: {}\nrejected: {}\n", self.imported.len(), self.rejected.len());
        for i in &self.imported {
            match i.replaced_id {
                Some(old) => out.push_str(&format!("  + {} {} (id {old} was taken)\n", i.id, i.name)),
                None => out.push_str(&format!("  + {} {}\n", i.id, i.name)),
            }
        }
        for r in &self.rejected {
            out.push_str(&format!("  ! {}: {}\n", r.source.display(), r.reason));
        }
        out
    }
}

/// Every `SKILL.md` below `root`, in path order.
fn find_artifacts(root: &Path) -> Result<Vec<PathBuf>, ArchiveError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| ArchiveError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && entry.file_name() == SKILL_FILE {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

/// Import each artifact under `archive` into `scope`. Artifacts are
/// validated one by one; a bad one is rejected without affecting the rest.
/// Embeddings are computed on the next retrieval.
pub fn import(bank: &SkillBank, scope: &BankScope, archive: &Path) -> Result<ImportReport, ArchiveError> {
    if !archive.is_dir() {
        return Err(ArchiveError::Io {
            path: archive.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "archive directory not found"),
        });
    }
    let mut report = ImportReport::default();
    for source in find_artifacts(archive)? {
        match import_one(bank, scope, &source) {
            Ok(imported) => report.imported.push(imported),
            Err(reason) => report.rejected.push(Rejected { source, reason }),
        }
    }
    Ok(report)
}

fn import_one(bank: &SkillBank, scope: &BankScope, source: &Path) -> Result<Imported, String> {
    let text = fs::read_to_string(source).map_err(|e| e.to_string())?;
    let mut skill = parse_skill_md(&text).map_err(|e| e.to_string())?;
    skill.validate().map_err(|e| format!("{} ({})", e, e.code()))?;
    let mut replaced_id = None;
    if bank.get_skill(scope, &skill.id).map_err(|e| e.to_string())?.is_some() {
        replaced_id = Some(skill.id);
        skill.id = Uuid::new_v4();
    }
    let written = bank.put_skill(scope, &skill).map_err(|e| e.to_string())?;
    let src_dir = source.parent().expect("artifact file has a parent");
    let dst_dir = written.parent().expect("artifact file has a parent");
    if let Err(e) = copy_resources(src_dir, dst_dir) {
        // Leave nothing half-imported behind.
        let _ = bank.delete_skill(scope, &skill.id);
        return Err(e.to_string());
    }
    Ok(Imported {
        source: source.to_path_buf(),
        id: skill.id,
        name: skill.name,
        replaced_id,
    })
}

/// Files next to `SKILL.md` (scripts, references, assets).
fn copy_resources(src: &Path, dst: &Path) -> Result<(), ArchiveError> {
    for entry in fs::read_dir(src).map_err(io_err(src))? {
        let entry = entry.map_err(io_err(src))?;
        let path = entry.path();
        if entry.file_name() == SKILL_FILE {
            continue;
        }
        let target = dst.join(entry.file_name());
        if path.is_dir() {
            if path.join(SKILL_FILE).exists() {
                continue;
            }
            copy_tree(&path, &target)?;
        } else {
            fs::copy(&path, &target).map_err(io_err(&target))?;
        }
    }
    Ok(())
}
