//! Parsers for the JSON objects the extraction, judge and merge prompts
//! request. Extraction is tolerant (prose and code fences around the
//! object are ignored); validation afterwards is strict.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::skill::{dedup_preserving_order, has_heading, SkillCandidate, CONSTRAINTS_HEADING, GOAL_HEADING};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OutputError {
    #[error("no JSON object found: {0}")]
    Unparseable(String),
    #[error("invalid action {0:?}")]
    InvalidAction(String),
    #[error("merge decision without target_skill_id")]
    MergeWithoutTarget,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("prompt lacks the `{0}` heading")]
    MissingHeading(&'static str),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

/// The first JSON object embedded in `text`.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let mut search_from = 0;
    while let Some(offset) = text[search_from..].find('{') {
        let start = search_from + offset;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
        search_from = start + 1;
    }
    None
}

fn object(text: &str) -> Result<Map<String, Value>, OutputError> {
    extract_json_object(text).ok_or_else(|| {
        let preview: String = text.chars().take(80).collect();
        OutputError::Unparseable(preview)
    })
}

/// Candidates from an extraction reply. Elements that fail validation are
/// dropped with a warning; `{"skills": []}` is a legal empty answer.
pub fn parse_extraction_output(text: &str) -> Result<Vec<SkillCandidate>, OutputError> {
    let map = object(text)?;
    let skills = match map.get("skills") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(OutputError::Unparseable("`skills` is not a list".into())),
        None => return Err(OutputError::Unparseable("object has no `skills` list".into())),
    };
    let mut out = Vec::with_capacity(skills.len());
    for (i, item) in skills.iter().enumerate() {
        match candidate(item) {
            Ok(c) => out.push(c),
            Err(e) => tracing::warn!(index = i, error = %e, "dropping invalid skill candidate"),
        }
    }
    Ok(out)
}

fn candidate(item: &Value) -> Result<SkillCandidate, OutputError> {
    let Value::Object(map) = item else {
        return Err(OutputError::InvalidField {
            field: "skills",
            reason: "element is not an object".into(),
        });
    };
    let name = required_string(map, "name")?;
    let prompt = required_string(map, "prompt")?;
    if !has_heading(&prompt, GOAL_HEADING) {
        return Err(OutputError::MissingHeading(GOAL_HEADING));
    }
    let confidence = match map.get("confidence") {
        Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
        Some(Value::String(s)) => s.trim().parse().unwrap_or(f64::NAN),
        Some(_) | None => return Err(OutputError::MissingField("confidence")),
    };
    if !(0.0..=1.0).contains(&confidence) {
        return Err(OutputError::InvalidField {
            field: "confidence",
            reason: format!("{confidence} is outside [0, 1]"),
        });
    }
    Ok(SkillCandidate {
        name,
        description: optional_string(map, "description")?,
        prompt,
        triggers: string_list(map, "triggers", false)?,
        tags: string_list(map, "tags", false)?,
        examples: string_list(map, "examples", true)?,
        confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeAction {
    Add,
    Merge,
    Discard,
}

impl JudgeAction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Merge => "merge",
            Self::Discard => "discard",
        }
    }
}

/// `target_skill_id` is set exactly when `action` is merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeDecision {
    pub action: JudgeAction,
    pub target_skill_id: Option<String>,
    pub reason: String,
}

impl JudgeDecision {
    pub fn add(reason: impl Into<String>) -> Self {
        Self {
            action: JudgeAction::Add,
            target_skill_id: None,
            reason: reason.into(),
        }
    }

    pub fn discard(reason: impl Into<String>) -> Self {
        Self {
            action: JudgeAction::Discard,
            target_skill_id: None,
            reason: reason.into(),
        }
    }

    pub fn merge(target: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            action: JudgeAction::Merge,
            target_skill_id: Some(target.into()),
            reason: reason.into(),
        }
    }
}

pub fn parse_judge_output(text: &str) -> Result<JudgeDecision, OutputError> {
    let map = object(text)?;
    let action = match map.get("action") {
        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "add" => JudgeAction::Add,
            "merge" => JudgeAction::Merge,
            "discard" => JudgeAction::Discard,
            _ => return Err(OutputError::InvalidAction(s.clone())),
        },
        Some(other) => return Err(OutputError::InvalidAction(other.to_string())),
        None => return Err(OutputError::MissingField("action")),
    };
    let target = match map.get("target_skill_id") {
        Some(Value::String(s)) if !s.trim().is_empty() && s.trim() != "null" => Some(s.trim().to_string()),
        _ => None,
    };
    let reason = match map.get("reason") {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };
    match action {
        JudgeAction::Merge => {
            let target = target.ok_or(OutputError::MergeWithoutTarget)?;
            Ok(JudgeDecision::merge(target, reason))
        }
        // A stray target on add/discard carries no meaning; drop it.
        JudgeAction::Add => Ok(JudgeDecision::add(reason)),
        JudgeAction::Discard => Ok(JudgeDecision::discard(reason)),
    }
}

/// The six content fields produced by a merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedFields {
    pub name: String,
    pub description: String,
    pub prompt: String,
    pub triggers: Vec<String>,
    pub tags: Vec<String>,
    pub examples: Vec<String>,
}

pub fn parse_merge_output(text: &str) -> Result<MergedFields, OutputError> {
    let map = object(text)?;
    const FIELDS: [&str; 6] = ["name", "description", "prompt", "triggers", "tags", "examples"];
    for field in FIELDS {
        if !map.contains_key(field) {
            return Err(OutputError::MissingField(field));
        }
    }
    let prompt = required_string(&map, "prompt")?;
    for heading in [GOAL_HEADING, CONSTRAINTS_HEADING] {
        if !has_heading(&prompt, heading) {
            return Err(OutputError::MissingHeading(heading));
        }
    }
    Ok(MergedFields {
        name: required_string(&map, "name")?,
        description: optional_string(&map, "description")?,
        prompt,
        triggers: string_list(&map, "triggers", false)?,
        tags: string_list(&map, "tags", false)?,
        examples: string_list(&map, "examples", true)?,
    })
}

fn required_string(map: &Map<String, Value>, field: &'static str) -> Result<String, OutputError> {
    match map.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(OutputError::InvalidField {
            field,
            reason: "empty".into(),
        }),
        Some(_) => Err(OutputError::InvalidField {
            field,
            reason: "not a string".into(),
        }),
        None => Err(OutputError::MissingField(field)),
    }
}

fn optional_string(map: &Map<String, Value>, field: &'static str) -> Result<String, OutputError> {
    match map.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Ok(String::new()),
        Some(_) => Err(OutputError::InvalidField {
            field,
            reason: "not a string".into(),
        }),
    }
}

/// A deduplicated list of non-empty strings. With `stringify`, non-string
/// elements (e.g. `{"input": .., "output": ..}` examples) are kept as
/// compact JSON text.
fn string_list(map: &Map<String, Value>, field: &'static str, stringify: bool) -> Result<Vec<String>, OutputError> {
    let items = match map.get(field) {
        Some(Value::Array(items)) => items,
        Some(Value::String(s)) => return Ok(if s.trim().is_empty() { vec![] } else { vec![s.clone()] }),
        Some(Value::Null) | None => return Ok(Vec::new()),
        Some(_) => {
            return Err(OutputError::InvalidField {
                field,
                reason: "not a list".into(),
            })
        }
    };
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(s) if s.trim().is_empty() => {}
            Value::String(s) => out.push(s.clone()),
            Value::Null => {}
            other if stringify => out.push(other.to_string()),
            other => {
                return Err(OutputError::InvalidField {
                    field,
                    reason: format!("element {other} is not a string"),
                })
            }
        }
    }
    Ok(dedup_preserving_order(out))
}
