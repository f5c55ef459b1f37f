//! Offline bootstrapping: replay recorded conversations through the skill
//! lifecycle without serving anything.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use autoskill_core::lifecycle::Evolver;
use autoskill_core::llm::{ChatMessage, JudgeAction, Role};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One line of an ingest file: an OpenAI-format message list plus optional
/// metadata, which is ignored.
#[derive(Debug, Deserialize)]
struct ConversationRecord {
    messages: Vec<RecordMessage>,
}

#[derive(Debug, Deserialize)]
struct RecordMessage {
    role: String,
    #[serde(default)]
    content: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub file: PathBuf,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub conversations: usize,
    pub messages: usize,
    pub candidates: usize,
    pub low_confidence: usize,
    pub adds: usize,
    pub merges: usize,
    pub discards: usize,
    pub failed_updates: usize,
    pub failed_turns: usize,
    pub skipped: usize,
    pub filtered: usize,
    pub skipped_records: Vec<SkippedRecord>,
}

impl IngestReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("conversations", self.conversations),
            ("messages", self.messages),
            ("candidates", self.candidates),
            ("low_confidence", self.low_confidence),
            ("adds", self.adds),
            ("merges", self.merges),
            ("discards", self.discards),
            ("failed_updates", self.failed_updates),
            ("failed_turns", self.failed_turns),
            ("skipped", self.skipped),
            ("filtered", self.filtered),
        ] {
            out.push_str(&format!("{k}: {v}\n"));
        }
        for s in &self.skipped_records {
            out.push_str(&format!("skipped {}:{}: {}\n", s.file.display(), s.line, s.reason));
        }
        out
    }
}

fn content_text(content: &Value) -> Option<String> {
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        Value::Null => Some(String::new()),
        _ => None,
    }
}

/// Parse one record into its user and assistant messages.
pub fn parse_record(line: &str) -> Result<Vec<ChatMessage>, String> {
    let record: ConversationRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(record.messages.len());
    for (i, m) in record.messages.iter().enumerate() {
        let role = match m.role.as_str() {
            "system" => continue,
            "user" => Role::User,
            "assistant" => Role::Assistant,
            other => return Err(format!("messages[{i}]: unsupported role {other:?}")),
        };
        let text = content_text(&m.content).ok_or_else(|| format!("messages[{i}]: content is not text"))?;
        out.push(ChatMessage::new(role, text));
    }
    if !out.iter().any(|m| m.role == Role::User) {
        return Err("no user message".into());
    }
    Ok(out)
}

/// `path` itself, or every `.jsonl` file below it in path order.
pub fn collect_inputs(path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        ));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "jsonl") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// Replay every conversation in `inputs` for `user_id`. Each user turn runs
/// one extract, judge and update pass over the conversation so far.
/// Conversations with fewer than `min_turns` user messages are filtered.
pub async fn ingest(
    evolver: &Evolver,
    user_id: &str,
    inputs: &[PathBuf],
    min_turns: usize,
) -> std::io::Result<IngestReport> {
    let mut report = IngestReport::default();
    for file in inputs {
        let reader = BufReader::new(std::fs::File::open(file)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let messages = match parse_record(&line) {
                Ok(m) => m,
                Err(reason) => {
                    report.skipped += 1;
                    report.skipped_records.push(SkippedRecord {
                        file: file.clone(),
                        line: i + 1,
                        reason,
                    });
                    continue;
                }
            };
            let user_turns = messages.iter().filter(|m| m.role == Role::User).count();
            if user_turns < min_turns {
                report.filtered += 1;
                continue;
            }
            report.conversations += 1;
            report.messages += messages.len();
            for (end, m) in messages.iter().enumerate() {
                if m.role != Role::User {
                    continue;
                }
                let turn = evolver.evolve_turn(user_id, &messages[..=end]).await;
                if turn.error.is_some() {
                    report.failed_turns += 1;
                }
                report.candidates += turn.candidates.len();
                report.low_confidence += turn.below_confidence;
                report.adds += turn.count(JudgeAction::Add);
                report.merges += turn.count(JudgeAction::Merge);
                report.discards += turn.count(JudgeAction::Discard);
                report.failed_updates += turn.candidates.iter().filter(|c| c.error.is_some()).count();
            }
        }
    }
    Ok(report)
}
