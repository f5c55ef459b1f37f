//! Chat and embedding backends, prompt templates and parsers for the
//! structured outputs the prompts ask for.

mod mock;
mod openai;
mod prompts;
mod structured;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use mock::{MatchAnchor, MockBackend, MockRule, MockScenario};
pub use openai::{OpenAiChatBackend, OpenAiClient, OpenAiEmbeddingBackend, RoleModels};
pub use prompts::{PromptError, PromptRole, PromptTemplates, RenderedPrompt, Slots};
pub use structured::{
    extract_json_object, parse_extraction_output, parse_judge_output, parse_merge_output, JudgeAction, JudgeDecision,
    MergedFields, OutputError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

/// One internal completion request. `role` names the prompt the call was
/// rendered from; backends may use it to pick a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatCall {
    pub role: PromptRole,
    pub system: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatCall {
    pub fn from_prompt(role: PromptRole, prompt: RenderedPrompt) -> Self {
        Self {
            role,
            system: prompt.system,
            messages: vec![ChatMessage::user(prompt.user)],
        }
    }

    /// Concatenated user-message text.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("upstream returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected upstream response: {0}")]
    InvalidResponse(String),
    #[error("backend failure: {0}")]
    Failed(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn identifier(&self) -> &str;

    async fn complete(&self, call: &ChatCall) -> Result<String, BackendError>;
}

#[async_trait]
pub trait EmbeddingBackend: Send + Sync {
    /// Model name; part of the vector cache name.
    fn model(&self) -> &str;

    fn dimension(&self) -> usize;

    /// One vector of `dimension()` entries per input text, in order.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

const JSON_REMINDER: &str = "Output only valid JSON. Do not include any other text.";

#[derive(Debug, thiserror::Error)]
pub enum StructuredCallError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Run `call` and parse its output. An unparseable reply is retried once
/// with a reminder to emit JSON; any other failure is returned as is.
pub async fn complete_structured<T>(
    backend: &dyn ChatBackend,
    call: &ChatCall,
    parse: impl Fn(&str) -> Result<T, OutputError>,
) -> Result<T, StructuredCallError> {
    let reply = backend.complete(call).await?;
    match parse(&reply) {
        Err(OutputError::Unparseable(reason)) => {
            tracing::warn!(role = ?call.role, %reason, "unparseable structured output, retrying once");
            let mut retry = call.clone();
            retry.messages.push(ChatMessage::assistant(reply));
            retry.messages.push(ChatMessage::user(JSON_REMINDER));
            let reply = backend.complete(&retry).await?;
            Ok(parse(&reply)?)
        }
        other => Ok(other?),
    }
}

/// Scale to unit length; zero vectors are returned unchanged.
pub fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    v
}
