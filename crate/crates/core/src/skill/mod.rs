//! The skill artifact: identity, versioning and the `SKILL.md` codec.

mod markdown;
mod slug;
mod version;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub use markdown::{parse_skill_md, serialize_skill_md, SkillParseError};
pub use slug::slugify;
pub use version::{bump_patch, SemVer, VersionParseError, INITIAL_VERSION};

pub const GOAL_HEADING: &str = "# Goal";
pub const CONSTRAINTS_HEADING: &str = "# Constraints & Style";

/// A frontmatter entry the codec does not recognise, kept verbatim so hand
/// edits survive a rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraField {
    pub key: String,
    /// Raw frontmatter lines for this key, without trailing newline.
    pub raw: String,
}

/// A persisted, versioned skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub id: Uuid,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub prompt: String,
    #[serde(default)]
    pub triggers: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub examples: Vec<String>,
    pub version: SemVer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<ExtraField>,
}

/// Extraction output: skill content plus a confidence, without identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCandidate {
    pub name: String,
    pub description: String,
    pub prompt: String,
    pub triggers: Vec<String>,
    pub tags: Vec<String>,
    pub examples: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkillInvariant {
    #[error("name must be non-empty")]
    EmptyName,
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("prompt must contain a `# Goal` heading")]
    MissingGoalHeading,
    #[error("duplicate trigger {0:?}")]
    DuplicateTrigger(String),
    #[error("duplicate tag {0:?}")]
    DuplicateTag(String),
    #[error("duplicate example {0:?}")]
    DuplicateExample(String),
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
}

impl SkillInvariant {
    /// Short machine-readable name of the violated invariant.
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyName => "empty_name",
            Self::EmptyPrompt => "empty_prompt",
            Self::MissingGoalHeading => "missing_goal_heading",
            Self::DuplicateTrigger(_) => "duplicate_trigger",
            Self::DuplicateTag(_) => "duplicate_tag",
            Self::DuplicateExample(_) => "duplicate_example",
            Self::ConfidenceOutOfRange(_) => "confidence_out_of_range",
        }
    }

    pub fn field(&self) -> &'static str {
        match self {
            Self::EmptyName => "name",
            Self::EmptyPrompt | Self::MissingGoalHeading => "prompt",
            Self::DuplicateTrigger(_) => "triggers",
            Self::DuplicateTag(_) => "tags",
            Self::DuplicateExample(_) => "examples",
            Self::ConfidenceOutOfRange(_) => "confidence",
        }
    }
}

impl Skill {
    /// Mint a new skill from a candidate at the initial version.
    pub fn from_candidate(id: Uuid, candidate: &SkillCandidate) -> Self {
        Self {
            id,
            name: candidate.name.clone(),
            description: candidate.description.clone(),
            prompt: candidate.prompt.clone(),
            triggers: dedup_preserving_order(candidate.triggers.clone()),
            tags: dedup_preserving_order(candidate.tags.clone()),
            examples: dedup_preserving_order(candidate.examples.clone()),
            version: INITIAL_VERSION,
            confidence: Some(candidate.confidence),
            extra: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SkillInvariant> {
        if self.name.trim().is_empty() {
            return Err(SkillInvariant::EmptyName);
        }
        if self.prompt.trim().is_empty() {
            return Err(SkillInvariant::EmptyPrompt);
        }
        if !has_heading(&self.prompt, GOAL_HEADING) {
            return Err(SkillInvariant::MissingGoalHeading);
        }
        if let Some(d) = first_duplicate(&self.triggers) {
            return Err(SkillInvariant::DuplicateTrigger(d.to_string()));
        }
        if let Some(d) = first_duplicate(&self.tags) {
            return Err(SkillInvariant::DuplicateTag(d.to_string()));
        }
        if let Some(d) = first_duplicate(&self.examples) {
            return Err(SkillInvariant::DuplicateExample(d.to_string()));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(SkillInvariant::ConfidenceOutOfRange(c));
            }
        }
        Ok(())
    }

    /// True when any user-visible content differs (identity, version and
    /// confidence are ignored).
    pub fn content_differs(&self, other: &Skill) -> bool {
        self.name != other.name
            || self.description != other.description
            || self.prompt != other.prompt
            || self.triggers != other.triggers
            || self.tags != other.tags
            || self.examples != other.examples
    }
}

/// Whether `markdown` has a line that opens with `heading`.
pub fn has_heading(markdown: &str, heading: &str) -> bool {
    markdown.lines().any(|line| {
        let line = line.trim();
        match line.strip_prefix(heading) {
            Some(rest) => rest.is_empty() || rest.starts_with([' ', '\t', ':']),
            None => false,
        }
    })
}

pub fn dedup_preserving_order(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().filter(|item| seen.insert(item.clone())).collect()
}

fn first_duplicate(items: &[String]) -> Option<&str> {
    let mut seen = std::collections::HashSet::new();
    items
        .iter()
        .find(|item| !seen.insert(item.as_str()))
        .map(String::as_str)
}
