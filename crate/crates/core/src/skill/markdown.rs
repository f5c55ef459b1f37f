//! `SKILL.md` reader and writer.
//!
//! The frontmatter is a small YAML subset: `key: scalar` lines and string
//! lists written either in flow style (`[a, "b"]`) or as `- item` blocks.
//! The writer always emits the normalized form below, which the reader maps
//! back byte-for-byte:
//!
//! ```text
//! ---
//! id: a407043f-d6b0-4760-821e-86b538c149c1
//! name: "professional_text_rewrite"
//! version: 0.1.34
//! description: "..."
//! tags:
//!   - "rewrite"
//! triggers: []
//! examples: []
//! confidence: 0.9
//! ---
//!
//! # Goal
//! ...
//! ```

use std::fmt::Write as _;

use uuid::Uuid;

use super::{ExtraField, SemVer, Skill};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkillParseError {
    #[error("document does not start with a `---` delimited frontmatter block")]
    MissingFrontmatter,
    #[error("frontmatter is missing required key `{0}`")]
    MissingRequiredKey(&'static str),
    #[error("malformed version {0:?}")]
    MalformedVersion(String),
    #[error("malformed skill id {0:?}")]
    MalformedUuid(String),
    #[error("malformed value for `{key}`: {reason}")]
    MalformedValue { key: String, reason: String },
}

const KNOWN_KEYS: [&str; 8] = [
    "id",
    "name",
    "version",
    "description",
    "tags",
    "triggers",
    "examples",
    "confidence",
];

pub fn serialize_skill_md(skill: &Skill) -> String {
    let mut out = String::with_capacity(skill.prompt.len() + 256);
    out.push_str("---\n");
    let _ = writeln!(out, "id: {}", skill.id.hyphenated());
    let _ = writeln!(out, "name: {}", quote(&skill.name));
    let _ = writeln!(out, "version: {}", skill.version);
    let _ = writeln!(out, "description: {}", quote(&skill.description));
    write_list(&mut out, "tags", &skill.tags);
    write_list(&mut out, "triggers", &skill.triggers);
    write_list(&mut out, "examples", &skill.examples);
    if let Some(c) = skill.confidence {
        let _ = writeln!(out, "confidence: {c}");
    }
    for extra in &skill.extra {
        out.push_str(&extra.raw);
        out.push('\n');
    }
    out.push_str("---\n\n");
    out.push_str(&skill.prompt);
    out
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn write_list(out: &mut String, key: &str, items: &[String]) {
    if items.is_empty() {
        let _ = writeln!(out, "{key}: []");
        return;
    }
    let _ = writeln!(out, "{key}:");
    for item in items {
        let _ = writeln!(out, "  - {}", quote(item));
    }
}

struct Entry<'a> {
    key: &'a str,
    inline: &'a str,
    continuation: Vec<&'a str>,
    raw: Vec<&'a str>,
}

pub fn parse_skill_md(text: &str) -> Result<Skill, SkillParseError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (frontmatter, body) = split_frontmatter(text)?;
    let entries = group_entries(&frontmatter)?;

    let mut id = None;
    let mut name = None;
    let mut version = None;
    let mut description = None;
    let mut tags = None;
    let mut triggers = None;
    let mut examples = None;
    let mut confidence = None;
    let mut extra = Vec::new();
    let mut seen = std::collections::HashSet::new();

    for entry in entries {
        if KNOWN_KEYS.contains(&entry.key) && !seen.insert(entry.key) {
            return Err(malformed(entry.key, "duplicate key"));
        }
        match entry.key {
            "id" => {
                let raw = scalar(&entry)?;
                let parsed = Uuid::parse_str(&raw).map_err(|_| SkillParseError::MalformedUuid(raw.clone()))?;
                id = Some(parsed);
            }
            "name" => name = Some(scalar(&entry)?),
            "version" => {
                let raw = scalar(&entry)?;
                let parsed: SemVer = raw
                    .parse()
                    .map_err(|_| SkillParseError::MalformedVersion(raw.clone()))?;
                version = Some(parsed);
            }
            "description" => description = Some(scalar_or_empty(&entry)?),
            "tags" => tags = Some(list(&entry)?),
            "triggers" => triggers = Some(list(&entry)?),
            "examples" => examples = Some(list(&entry)?),
            "confidence" => confidence = Some(parse_confidence(&entry)?),
            _ => extra.push(ExtraField {
                key: entry.key.to_string(),
                raw: entry.raw.join("\n"),
            }),
        }
    }

    Ok(Skill {
        id: id.ok_or(SkillParseError::MissingRequiredKey("id"))?,
        name: name.ok_or(SkillParseError::MissingRequiredKey("name"))?,
        version: version.ok_or(SkillParseError::MissingRequiredKey("version"))?,
        description: description.unwrap_or_default(),
        prompt: body.to_string(),
        triggers: triggers.unwrap_or_default(),
        tags: tags.unwrap_or_default(),
        examples: examples.unwrap_or_default(),
        confidence: confidence.flatten(),
        extra,
    })
}

/// Returns the frontmatter lines and the body (with one leading newline
/// removed).
fn split_frontmatter(text: &str) -> Result<(Vec<&str>, &str), SkillParseError> {
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or(SkillParseError::MissingFrontmatter)?;
    if strip_eol(first) != "---" {
        return Err(SkillParseError::MissingFrontmatter);
    }
    let mut offset = first.len();
    let mut frontmatter = Vec::new();
    for line in lines {
        offset += line.len();
        let content = strip_eol(line);
        if content == "---" {
            let rest = &text[offset..];
            let body = rest
                .strip_prefix("\r\n")
                .or_else(|| rest.strip_prefix('\n'))
                .unwrap_or(rest);
            return Ok((frontmatter, body));
        }
        frontmatter.push(content);
    }
    Err(SkillParseError::MissingFrontmatter)
}

fn strip_eol(line: &str) -> &str {
    let line = line.strip_suffix('\n').unwrap_or(line);
    line.strip_suffix('\r').unwrap_or(line)
}

fn group_entries<'a>(lines: &[&'a str]) -> Result<Vec<Entry<'a>>, SkillParseError> {
    let mut entries: Vec<Entry<'a>> = Vec::new();
    for &line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let continuation = line.starts_with([' ', '\t', '-']);
        if continuation {
            let entry = entries
                .last_mut()
                .ok_or_else(|| malformed("<frontmatter>", &format!("unexpected indented line {line:?}")))?;
            entry.continuation.push(line.trim());
            entry.raw.push(line);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (key, inline) = line
            .split_once(':')
            .ok_or_else(|| malformed("<frontmatter>", &format!("expected `key: value`, got {line:?}")))?;
        let key = key.trim_end();
        if key.is_empty() {
            return Err(malformed("<frontmatter>", "empty key"));
        }
        entries.push(Entry {
            key,
            inline: inline.trim(),
            continuation: Vec::new(),
            raw: vec![line],
        });
    }
    Ok(entries)
}

fn malformed(key: &str, reason: &str) -> SkillParseError {
    SkillParseError::MalformedValue {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

fn scalar(entry: &Entry<'_>) -> Result<String, SkillParseError> {
    if !entry.continuation.is_empty() {
        return Err(malformed(entry.key, "multi-line values are not supported"));
    }
    parse_scalar(entry.inline).map_err(|reason| malformed(entry.key, &reason))
}

/// A bare `~` or `null` reads as empty. Quoted forms keep their text.
fn scalar_or_empty(entry: &Entry<'_>) -> Result<String, SkillParseError> {
    match entry.inline.trim() {
        "~" | "null" if entry.continuation.is_empty() => Ok(String::new()),
        _ => scalar(entry),
    }
}

fn parse_confidence(entry: &Entry<'_>) -> Result<Option<f64>, SkillParseError> {
    let raw = scalar(entry)?;
    if raw.is_empty() || raw == "~" || raw == "null" {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(c) if c.is_finite() => Ok(Some(c)),
        _ => Err(malformed(entry.key, &format!("{raw:?} is not a number"))),
    }
}

fn list(entry: &Entry<'_>) -> Result<Vec<String>, SkillParseError> {
    let fail = |reason: String| malformed(entry.key, &reason);
    if !entry.inline.is_empty() {
        if !entry.continuation.is_empty() {
            return Err(fail("both inline and block list items".into()));
        }
        return parse_flow_list(entry.inline).map_err(fail);
    }
    entry
        .continuation
        .iter()
        .map(|line| {
            let item = line
                .strip_prefix('-')
                .ok_or_else(|| fail(format!("expected `- item`, got {line:?}")))?;
            if !(item.is_empty() || item.starts_with([' ', '\t'])) {
                return Err(fail(format!("expected `- item`, got {line:?}")));
            }
            parse_scalar(item.trim()).map_err(fail)
        })
        .collect()
}

fn parse_flow_list(s: &str) -> Result<Vec<String>, String> {
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("expected a `[...]` list, got {s:?}"))?;
    let mut items = Vec::new();
    let mut rest = inner.trim_start();
    while !rest.is_empty() {
        let (item, remaining) = take_flow_item(rest)?;
        items.push(item);
        rest = remaining.trim_start();
        if let Some(after_comma) = rest.strip_prefix(',') {
            rest = after_comma.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("unexpected {rest:?} in list"));
        }
    }
    Ok(items)
}

fn take_flow_item(s: &str) -> Result<(String, &str), String> {
    if s.starts_with('"') {
        let (value, len) = double_quoted(s)?;
        return Ok((value, &s[len..]));
    }
    if s.starts_with('\'') {
        let (value, len) = single_quoted(s)?;
        return Ok((value, &s[len..]));
    }
    let end = s.find(',').unwrap_or(s.len());
    Ok((s[..end].trim().to_string(), &s[end..]))
}

fn parse_scalar(s: &str) -> Result<String, String> {
    let (value, len) = if s.starts_with('"') {
        double_quoted(s)?
    } else if s.starts_with('\'') {
        single_quoted(s)?
    } else {
        let plain = match s.find(" #") {
            Some(i) => &s[..i],
            None => s,
        };
        return Ok(plain.trim().to_string());
    };
    let trailing = s[len..].trim();
    if !(trailing.is_empty() || trailing.starts_with('#')) {
        return Err(format!("trailing characters after quoted value: {trailing:?}"));
    }
    Ok(value)
}

/// Decodes a leading double-quoted string; returns it and the bytes consumed.
fn double_quoted(s: &str) -> Result<(String, usize), String> {
    let mut stream = serde_json::Deserializer::from_str(s).into_iter::<String>();
    match stream.next() {
        Some(Ok(value)) => Ok((value, stream.byte_offset())),
        _ => Err(format!("invalid double-quoted string {s:?}")),
    }
}

fn single_quoted(s: &str) -> Result<(String, usize), String> {
    let mut out = String::new();
    let mut chars = s.char_indices().skip(1).peekable();
    while let Some((i, ch)) = chars.next() {
        if ch == '\'' {
            if matches!(chars.peek(), Some((_, '\''))) {
                out.push('\'');
                chars.next();
            } else {
                return Ok((out, i + 1));
            }
        } else {
            out.push(ch);
        }
    }
    Err(format!("unterminated single-quoted string {s:?}"))
}
