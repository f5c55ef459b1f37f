//! Deterministic scripted backend for tests, demos and offline runs.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{normalize, BackendError, ChatBackend, ChatCall, EmbeddingBackend, PromptRole};
use crate::retrieval::tokenize;

pub const MOCK_CHAT_REPLY: &str = "This is a mock response.";
const REWRITE_MARKER: &str = "Current user input:\n";

/// Where a rule's key must occur in the call's user text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchAnchor {
    #[default]
    Anywhere,
    /// The trimmed user text ends with the key, i.e. the key belongs to the
    /// most recent item of the prompt.
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub role: PromptRole,
    #[serde(rename = "match")]
    pub key: String,
    #[serde(default)]
    pub anchor: MatchAnchor,
    #[serde(default)]
    pub reply: String,
    /// Fail the call instead of replying.
    #[serde(default)]
    pub fail: bool,
}

impl MockRule {
    pub fn new(role: PromptRole, key: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            role,
            key: key.into(),
            anchor: MatchAnchor::Anywhere,
            reply: reply.into(),
            fail: false,
        }
    }

    pub fn at_tail(mut self) -> Self {
        self.anchor = MatchAnchor::Tail;
        self
    }

    pub fn failing(role: PromptRole, key: impl Into<String>) -> Self {
        Self {
            fail: true,
            ..Self::new(role, key, "")
        }
    }

    fn matches(&self, call: &ChatCall, user_text: &str) -> bool {
        if self.role != call.role {
            return false;
        }
        match self.anchor {
            MatchAnchor::Anywhere => user_text.contains(&self.key),
            MatchAnchor::Tail => user_text.trim_end().ends_with(self.key.trim_end()),
        }
    }
}

/// Scripted replies plus the embedding configuration. First matching rule
/// wins; unmatched calls get a neutral reply for their role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScenario {
    pub dimension: usize,
    pub seed: u64,
    pub rules: Vec<MockRule>,
    /// Artificial latency per prompt role, in milliseconds.
    pub delays_ms: BTreeMap<PromptRole, u64>,
    pub embed_delay_ms: u64,
    pub chat_reply: String,
}

impl Default for MockScenario {
    fn default() -> Self {
        Self {
            dimension: 64,
            seed: 7,
            rules: Vec::new(),
            delays_ms: BTreeMap::new(),
            embed_delay_ms: 0,
            chat_reply: MOCK_CHAT_REPLY.to_string(),
        }
    }
}

impl MockScenario {
    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_delay(mut self, role: PromptRole, delay: Duration) -> Self {
        self.delays_ms.insert(role, delay.as_millis() as u64);
        self
    }
}

/// Implements both [`ChatBackend`] and [`EmbeddingBackend`].
#[derive(Debug)]
pub struct MockBackend {
    scenario: MockScenario,
    calls: Mutex<Vec<ChatCall>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(MockScenario::default())
    }
}

impl MockBackend {
    pub fn new(scenario: MockScenario) -> Self {
        assert!(scenario.dimension > 0, "mock embedding dimension must be positive");
        Self {
            scenario,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn scenario(&self) -> &MockScenario {
        &self.scenario
    }

    /// Every chat call received so far, in arrival order.
    pub fn calls(&self) -> Vec<ChatCall> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn calls_for(&self, role: PromptRole) -> Vec<ChatCall> {
        self.calls().into_iter().filter(|c| c.role == role).collect()
    }

    fn reply(&self, call: &ChatCall) -> Result<String, BackendError> {
        let user_text = call.user_text();
        if let Some(rule) = self.scenario.rules.iter().find(|r| r.matches(call, &user_text)) {
            if rule.fail {
                return Err(BackendError::Failed(format!("scripted failure for {:?}", rule.key)));
            }
            return Ok(rule.reply.clone());
        }
        Ok(match call.role {
            PromptRole::Rewrite => match user_text.rfind(REWRITE_MARKER) {
                Some(i) => user_text[i + REWRITE_MARKER.len()..].trim().to_string(),
                None => user_text.lines().last().unwrap_or_default().to_string(),
            },
            PromptRole::Chat => self.scenario.chat_reply.clone(),
            PromptRole::Extract => r#"{"skills": []}"#.to_string(),
            PromptRole::Judge => {
                r#"{"action": "discard", "target_skill_id": null, "reason": "no scripted decision"}"#.to_string()
            }
            PromptRole::Merge => neutral_merge(&user_text),
        })
    }

    /// Feature-hashed bag of tokens, unit length. Texts without tokens hash
    /// as a whole.
    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let d = self.scenario.dimension;
        let seed = self.scenario.seed.to_le_bytes();
        let mut v = vec![0f32; d];
        for token in tokenize(text) {
            let h = Sha256::new()
                .chain_update(seed)
                .chain_update(token.as_bytes())
                .finalize();
            let idx = (u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % d as u64) as usize;
            v[idx] += if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        if v.iter().all(|x| *x == 0.0) {
            for (i, slot) in v.iter_mut().enumerate() {
                let h = Sha256::new()
                    .chain_update(seed)
                    .chain_update(text.as_bytes())
                    .chain_update((i as u64).to_le_bytes())
                    .finalize();
                let bits = u32::from_le_bytes(h[..4].try_into().expect("4 bytes"));
                *slot = (f64::from(bits) / f64::from(u32::MAX) * 2.0 - 1.0) as f32;
            }
        }
        normalize(v)
    }
}

/// Union of the existing skill and the candidate: existing text fields,
/// list fields concatenated (the parser deduplicates).
fn neutral_merge(user_text: &str) -> String {
    let mut objects = Vec::new();
    let mut rest = user_text;
    while let Some(start) = rest.find('{') {
        let mut stream = serde_json::Deserializer::from_str(&rest[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                let consumed = stream.byte_offset();
                objects.push(map);
                rest = &rest[start + consumed..];
            }
            _ => rest = &rest[start + 1..],
        }
    }
    let Some(existing) = objects.first() else {
        return "no skills to merge".to_string();
    };
    let empty = serde_json::Map::new();
    let candidate = objects.get(1).unwrap_or(&empty);
    let list = |key: &str| -> Vec<Value> {
        let mut out = Vec::new();
        for source in [existing, candidate] {
            if let Some(Value::Array(items)) = source.get(key) {
                out.extend(items.iter().cloned());
            }
        }
        out
    };
    let mut prompt = existing
        .get("prompt")
        .and_then(Value::as_str)
        .unwrap_or("# Goal")
        .to_string();
    if !crate::skill::has_heading(&prompt, crate::skill::CONSTRAINTS_HEADING) {
        prompt.push_str("\n\n# Constraints & Style\n");
    }
    json!({
        "name": existing.get("name").cloned().unwrap_or(Value::String(String::new())),
        "description": existing.get("description").cloned().unwrap_or(Value::String(String::new())),
        "prompt": prompt,
        "triggers": list("triggers"),
        "tags": list("tags"),
        "examples": list("examples"),
    })
    .to_string()
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn identifier(&self) -> &str {
        "mock"
    }

    async fn complete(&self, call: &ChatCall) -> Result<String, BackendError> {
        self.calls.lock().expect("call log poisoned").push(call.clone());
        if let Some(&ms) = self.scenario.delays_ms.get(&call.role) {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        self.reply(call)
    }
}

#[async_trait]
impl EmbeddingBackend for MockBackend {
    fn model(&self) -> &str {
        "mock-hash"
    }

    fn dimension(&self) -> usize {
        self.scenario.dimension
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        if self.scenario.embed_delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.scenario.embed_delay_ms)).await;
        }
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{parse_merge_output, ChatMessage, PromptTemplates, Slots};

    fn call(role: PromptRole, user: &str) -> ChatCall {
        ChatCall {
            role,
            system: String::new(),
            messages: vec![ChatMessage::user(user)],
        }
    }

    #[tokio::test]
    async fn neutral_replies() {
        let mock = MockBackend::default();
        let templates = PromptTemplates::builtin();
        let slots: Slots = [
            ("query", "make it shorter".to_string()),
            ("history", "user: x".to_string()),
        ]
        .into_iter()
        .collect();
        let rewrite = ChatCall::from_prompt(
            PromptRole::Rewrite,
            templates.render(PromptRole::Rewrite, &slots).unwrap(),
        );
        assert_eq!(mock.complete(&rewrite).await.unwrap(), "make it shorter");
        assert_eq!(
            mock.complete(&call(PromptRole::Chat, "hi")).await.unwrap(),
            MOCK_CHAT_REPLY
        );
        assert_eq!(
            mock.complete(&call(PromptRole::Extract, "q")).await.unwrap(),
            r#"{"skills": []}"#
        );
        assert!(mock
            .complete(&call(PromptRole::Judge, "q"))
            .await
            .unwrap()
            .contains("discard"));
        assert_eq!(mock.calls().len(), 4);
    }

    #[tokio::test]
    async fn rules_match_by_role_and_anchor() {
        let mock = MockBackend::new(
            MockScenario::default()
                .with_rule(MockRule::new(PromptRole::Extract, "latest", "A").at_tail())
                .with_rule(MockRule::new(PromptRole::Extract, "anywhere", "B"))
                .with_rule(MockRule::failing(PromptRole::Chat, "boom")),
        );
        assert_eq!(
            mock.complete(&call(PromptRole::Extract, "1. x\n2. latest"))
                .await
                .unwrap(),
            "A"
        );
        assert_eq!(
            mock.complete(&call(PromptRole::Extract, "1. latest\n2. anywhere y"))
                .await
                .unwrap(),
            "B"
        );
        assert_eq!(
            mock.complete(&call(PromptRole::Extract, "1. latest\n2. other"))
                .await
                .unwrap(),
            r#"{"skills": []}"#
        );
        assert!(mock.complete(&call(PromptRole::Chat, "boom")).await.is_err());
        assert!(mock
            .complete(&call(PromptRole::Judge, "latest"))
            .await
            .unwrap()
            .contains("discard"));
    }

    #[tokio::test]
    async fn embeddings_are_deterministic_unit_vectors() {
        let mock = MockBackend::new(MockScenario {
            dimension: 16,
            ..MockScenario::default()
        });
        let texts = vec![
            "rewrite this text".to_string(),
            "rewrite this text".to_string(),
            "".to_string(),
        ];
        let v = mock.embed(&texts).await.unwrap();
        assert_eq!(v[0], v[1]);
        for row in &v {
            assert_eq!(row.len(), 16);
            let norm: f64 = row.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        let other = MockBackend::new(MockScenario {
            dimension: 16,
            ..MockScenario::default()
        });
        assert_eq!(other.embed(&texts).await.unwrap(), v);
    }

    #[test]
    fn neutral_merge_unions_lists() {
        let existing = r##"{"name": "n", "description": "d", "prompt": "# Goal\nx\n\n# Constraints & Style\n- y", "triggers": ["a"], "tags": ["t"], "examples": []}"##;
        let candidate = r##"{"name": "m", "description": "e", "prompt": "# Goal\nz", "triggers": ["a", "b"], "tags": [], "examples": ["ex"]}"##;
        let out = neutral_merge(&format!("Existing skill:\n{existing}\n\nCandidate skill:\n{candidate}"));
        let merged = parse_merge_output(&out).unwrap();
        assert_eq!(merged.name, "n");
        assert_eq!(merged.triggers, vec!["a", "b"]);
        assert_eq!(merged.examples, vec!["ex"]);
    }
}
