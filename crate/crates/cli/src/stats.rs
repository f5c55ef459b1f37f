//! Bank statistics computed by scanning stored skills.

use std::collections::BTreeMap;
use std::path::Path;

use autoskill_core::bank::{BankError, BankScope, SkillBank};
use autoskill_core::skill::{SemVer, Skill};
use serde::{Deserialize, Serialize};

pub const DEFAULT_KEYWORDS: &str = include_str!("../data/platforms.toml");
pub const DEFAULT_CATEGORIES: &str = include_str!("../data/categories.toml");
const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordGroup {
    pub name: String,
    pub keywords: Vec<String>,
}

/// An ordered list of named keyword groups, as read from a mapping file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordMap {
    #[serde(default)]
    pub fallback: Option<String>,
    #[serde(default, rename = "group")]
    pub groups: Vec<KeywordGroup>,
}

impl KeywordMap {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// One group per keyword, named after it.
    pub fn from_keywords(keywords: &[String]) -> Self {
        Self {
            fallback: None,
            groups: keywords
                .iter()
                .map(|k| KeywordGroup {
                    name: k.clone(),
                    keywords: vec![k.clone()],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Count {
    pub key: String,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BankStats {
    pub total: usize,
    pub scopes: Vec<Count>,
    pub tags: Vec<Count>,
    pub versions: Vec<Count>,
    pub mentions: Vec<Count>,
    pub categories: Vec<Count>,
    pub warnings: Vec<String>,
}

/// True when every letter is from the Latin script (ASCII, Latin-1 and the
/// Latin Extended blocks).
fn is_latin(tag: &str) -> bool {
    tag.chars().filter(|c| c.is_alphabetic()).all(|c| {
        let c = c as u32;
        c < 0x80 || (0xC0..=0x24F).contains(&c) || (0x1E00..=0x1EFF).contains(&c)
    })
}

/// Latin tags are case-folded; tags in other scripts are kept verbatim.
pub fn normalize_tag(tag: &str) -> String {
    let tag = tag.trim();
    if is_latin(tag) {
        tag.to_lowercase()
    } else {
        tag.to_string()
    }
}

/// Whether any of `keywords` occurs in the skill's name, description, tags
/// or triggers, ignoring case.
pub fn mentions(skill: &Skill, keywords: &[String]) -> bool {
    let fields = std::iter::once(&skill.name)
        .chain(std::iter::once(&skill.description))
        .chain(&skill.tags)
        .chain(&skill.triggers)
        .map(|f| f.to_lowercase())
        .collect::<Vec<_>>();
    keywords.iter().any(|k| {
        let k = k.to_lowercase();
        !k.is_empty() && fields.iter().any(|f| f.contains(&k))
    })
}

fn sorted_by_count(map: BTreeMap<String, usize>) -> Vec<Count> {
    let mut out: Vec<Count> = map.into_iter().map(|(key, count)| Count { key, count }).collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    out
}

/// Statistics over the skills of `scopes`.
pub fn compute(
    bank: &SkillBank,
    scopes: &[BankScope],
    keywords: &KeywordMap,
    categories: &KeywordMap,
) -> Result<BankStats, BankError> {
    let mut stats = BankStats::default();
    let mut tags = BTreeMap::new();
    let mut versions: BTreeMap<SemVer, usize> = BTreeMap::new();
    let mut mention_counts = vec![0usize; keywords.groups.len()];
    let mut category_counts = vec![0usize; categories.groups.len()];
    let mut uncategorized = 0;

    for scope in scopes {
        let listing = bank.list_skills(scope)?;
        stats.warnings.extend(
            listing
                .warnings
                .iter()
                .map(|w| format!("{}: {}", w.path.display(), w.message)),
        );
        stats.scopes.push(Count {
            key: scope.to_string(),
            count: listing.skills.len(),
        });
        for stored in &listing.skills {
            let skill = &stored.skill;
            stats.total += 1;
            for tag in &skill.tags {
                *tags.entry(normalize_tag(tag)).or_insert(0) += 1;
            }
            *versions.entry(skill.version).or_insert(0) += 1;
            for (count, group) in mention_counts.iter_mut().zip(&keywords.groups) {
                if mentions(skill, &group.keywords) {
                    *count += 1;
                }
            }
            match categories.groups.iter().position(|g| mentions(skill, &g.keywords)) {
                Some(i) => category_counts[i] += 1,
                None => uncategorized += 1,
            }
        }
    }

    stats.tags = sorted_by_count(tags);
    stats.versions = versions
        .into_iter()
        .map(|(v, count)| Count {
            key: v.to_string(),
            count,
        })
        .collect();
    stats.mentions = keywords
        .groups
        .iter()
        .zip(mention_counts)
        .map(|(g, count)| Count {
            key: g.name.clone(),
            count,
        })
        .collect();
    stats.categories = categories
        .groups
        .iter()
        .zip(category_counts)
        .map(|(g, count)| Count {
            key: g.name.clone(),
            count,
        })
        .collect();
    stats.categories.push(Count {
        key: categories.fallback.clone().unwrap_or_else(|| UNCATEGORIZED.to_string()),
        count: uncategorized,
    });
    Ok(stats)
}

fn write_section(out: &mut String, title: &str, rows: &[Count]) {
    out.push_str(title);
    out.push('\n');
    if rows.is_empty() {
        out.push_str("  (none)\n");
    }
    let width = rows.iter().map(|r| r.key.chars().count()).max().unwrap_or(0);
    for r in rows {
        let pad = width - r.key.chars().count();
        out.push_str(&format!("  {}{}  {}\n", r.key, " ".repeat(pad), r.count));
    }
}

/// Plain-text report.
pub fn render(stats: &BankStats) -> String {
    let mut out = format!("skills: {}\n", stats.total);
    write_section(&mut out, "scopes:", &stats.scopes);
    write_section(&mut out, "tags:", &stats.tags);
    write_section(&mut out, "versions:", &stats.versions);
    write_section(&mut out, "mentions:", &stats.mentions);
    write_section(&mut out, "categories:", &stats.categories);
    for w in &stats.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
