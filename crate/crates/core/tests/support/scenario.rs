//! A scripted six-turn conversation: turn 1 adds a skill, turn 3 merges
//! into it, turn 5 is discarded, even turns extract nothing.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use autoskill_core::config::AppConfig;
use autoskill_core::ids::IdGenerator;
use autoskill_core::llm::{ChatMessage, MockBackend, MockRule, MockScenario, PromptRole, PromptTemplates};
use autoskill_core::serving::{Engine, TurnRequest, TurnTrace};

pub const ID_SEED: u64 = 2024;
pub const USER: &str = "alice";

pub const QUERIES: [&str; 6] = [
    "Rewrite this paragraph in a formal, professional tone: we shipped the thing late, sorry.",
    "What time zone is Singapore in?",
    "Now rewrite this email so it sounds professional and concise: hey, need the numbers asap.",
    "Thanks. How many ounces are in a cup?",
    "Rewrite this note professionally, same as before: cant make it, reschedule?",
    "Great, that is all for today.",
];

pub const ASSISTANT_MARKER: &str = "ASSISTANT-ONLY-TEXT";

fn skill_json(name: &str, description: &str, trigger: &str, confidence: f64) -> String {
    format!(
        r##"{{"skills": [{{"name": "{name}", "description": "{description}", "prompt": "# Goal\nRewrite the user's text in a professional tone.\n\n# Constraints & Style\n- Keep the meaning\n- Be concise", "triggers": ["{trigger}", "make it professional"], "tags": ["writing", "Rewrite"], "examples": ["{trigger}"], "confidence": {confidence}}}]}}"##
    )
}

/// The id the seeded generator hands to the first added skill.
pub fn first_skill_id() -> String {
    IdGenerator::seeded(ID_SEED).next_id().to_string()
}

pub fn scenario() -> MockScenario {
    let target = first_skill_id();
    MockScenario::default()
        .with_rule(
            MockRule::new(
                PromptRole::Extract,
                QUERIES[0],
                skill_json(
                    "professional_text_rewrite",
                    "Rewrite text into a formal, professional tone",
                    "rewrite this paragraph formally",
                    0.92,
                ),
            )
            .at_tail(),
        )
        .with_rule(
            MockRule::new(
                PromptRole::Extract,
                QUERIES[2],
                skill_json(
                    "professional_email_rewrite",
                    "Rewrite emails professionally and concisely",
                    "rewrite this email professionally",
                    0.88,
                ),
            )
            .at_tail(),
        )
        .with_rule(
            MockRule::new(
                PromptRole::Extract,
                QUERIES[4],
                skill_json(
                    "note_rewrite_once",
                    "Rewrite a single note professionally",
                    "rewrite this note",
                    0.81,
                ),
            )
            .at_tail(),
        )
        .with_rule(MockRule::new(
            PromptRole::Judge,
            "\"name\": \"professional_email_rewrite\"",
            format!(r#"{{"action": "merge", "target_skill_id": "{target}", "reason": "same capability"}}"#),
        ))
        .with_rule(MockRule::new(
            PromptRole::Judge,
            "\"name\": \"note_rewrite_once\"",
            r#"{"action": "discard", "target_skill_id": null, "reason": "already covered"}"#,
        ))
}

pub fn engine(root: &Path, mock: Arc<MockBackend>) -> Engine {
    let mut config = AppConfig::default();
    config.bank.root = Some(root.to_path_buf());
    config.evolution.id_seed = Some(ID_SEED);
    Engine::new(config, mock.clone(), mock, PromptTemplates::builtin())
}

/// Play all six turns, letting evolution finish after each one.
pub async fn run(root: &Path) -> (Arc<MockBackend>, Vec<TurnTrace>) {
    let mock = Arc::new(MockBackend::new(scenario()));
    let engine = engine(root, mock.clone());
    let mut messages = Vec::new();
    let mut traces = Vec::new();
    for (i, q) in QUERIES.iter().enumerate() {
        messages.push(ChatMessage::user(*q));
        let response = engine
            .handle_turn(TurnRequest::new(USER, messages.clone()))
            .await
            .unwrap();
        engine.scheduler().wait_idle().await;
        traces.push(engine.traces().get(response.trace.trace_id).unwrap());
        messages.push(ChatMessage::assistant(format!(
            "{ASSISTANT_MARKER} reply {i}: {}",
            response.text
        )));
    }
    engine.shutdown().await;
    (mock, traces)
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for entry in entries {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
