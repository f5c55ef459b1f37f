use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Separates the system part of a template file from its user part.
const USER_MARKER: &str = "<<<USER>>>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Rewrite,
    Chat,
    Extract,
    Judge,
    Merge,
}

impl PromptRole {
    pub const ALL: [PromptRole; 5] = [Self::Rewrite, Self::Chat, Self::Extract, Self::Judge, Self::Merge];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rewrite => "rewrite",
            Self::Chat => "chat",
            Self::Extract => "extract",
            Self::Judge => "judge",
            Self::Merge => "merge",
        }
    }

    pub fn required_slots(self) -> &'static [&'static str] {
        match self {
            Self::Rewrite => &["query", "history"],
            Self::Chat => &["history", "context"],
            Self::Extract => &["queries"],
            Self::Judge => &["candidate", "neighbor"],
            Self::Merge => &["existing", "candidate"],
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            Self::Rewrite => include_str!("../../prompts/rewrite.md"),
            Self::Chat => include_str!("../../prompts/chat.md"),
            Self::Extract => include_str!("../../prompts/extract.md"),
            Self::Judge => include_str!("../../prompts/judge.md"),
            Self::Merge => include_str!("../../prompts/merge.md"),
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Slots = BTreeMap<&'static str, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("{role} prompt is missing slot `{slot}`")]
    MissingSlot { role: PromptRole, slot: &'static str },
    #[error("template {path}: {reason}")]
    BadTemplate { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    system: String,
    user: String,
}

impl Template {
    fn parse(source: &str) -> Option<Self> {
        let (system, user) = source.split_once(USER_MARKER)?;
        Some(Self {
            system: system.to_string(),
            user: user.strip_prefix('\n').unwrap_or(user).to_string(),
        })
    }
}

/// One template per prompt role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: BTreeMap<PromptRole, Template>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        let templates = PromptRole::ALL
            .into_iter()
            .map(|role| {
                let template =
                    Template::parse(role.builtin_source()).expect("built-in templates contain the user marker");
                (role, template)
            })
            .collect();
        Self { templates }
    }

    /// Built-in templates, overridden by `<dir>/<role>.md` where present.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut out = Self::builtin();
        for role in PromptRole::ALL {
            let path = dir.join(format!("{}.md", role.as_str()));
            let source = match std::fs::read_to_string(&path) {
                Ok(source) => source,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => {
                    return Err(PromptError::BadTemplate {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })
                }
            };
            let template = Template::parse(&source).ok_or_else(|| PromptError::BadTemplate {
                path: path.display().to_string(),
                reason: format!("missing `{USER_MARKER}` line"),
            })?;
            out.templates.insert(role, template);
        }
        Ok(out)
    }

    /// Instantiate `role`'s template. `{{name}}` placeholders are replaced
    /// in a single pass, so slot values are never re-expanded.
    pub fn render(&self, role: PromptRole, slots: &Slots) -> Result<RenderedPrompt, PromptError> {
        for &slot in role.required_slots() {
            if !slots.contains_key(slot) {
                return Err(PromptError::MissingSlot { role, slot });
            }
        }
        let template = &self.templates[&role];
        Ok(RenderedPrompt {
            system: substitute(&template.system, slots).trim_end().to_string(),
            user: substitute(&template.user, slots).trim_end().to_string(),
        })
    }
}

fn substitute(template: &str, slots: &Slots) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let name = after[..close].trim();
                match slots.get(name) {
                    Some(value) => out.push_str(value),
                    None => out.push_str(&rest[open..open + 2 + close + 2]),
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
