//! OpenAI-compatible HTTP backends.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatCall, EmbeddingBackend, PromptRole};

#[derive(Debug, Clone)]
pub struct OpenAiClient {
    http: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
}

impl OpenAiClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut request = self.http.post(&url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| BackendError::Transport {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let status = response.status();
        let text = response.text().await.map_err(|e| BackendError::Transport {
            url: url.clone(),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(e.to_string()))
    }
}

/// Model name per prompt role, with a fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleModels {
    pub default: String,
    #[serde(default)]
    pub overrides: BTreeMap<PromptRole, String>,
}

impl RoleModels {
    pub fn uniform(model: impl Into<String>) -> Self {
        Self {
            default: model.into(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn for_role(&self, role: PromptRole) -> &str {
        self.overrides.get(&role).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiChatBackend {
    client: OpenAiClient,
    models: RoleModels,
}

impl OpenAiChatBackend {
    pub fn new(client: OpenAiClient, models: RoleModels) -> Self {
        Self { client, models }
    }
}

#[async_trait]
impl ChatBackend for OpenAiChatBackend {
    fn identifier(&self) -> &str {
        &self.models.default
    }

    async fn complete(&self, call: &ChatCall) -> Result<String, BackendError> {
        let mut messages = Vec::with_capacity(call.messages.len() + 1);
        if !call.system.is_empty() {
            messages.push(json!({"role": "system", "content": call.system}));
        }
        for m in &call.messages {
            messages.push(json!({"role": m.role.as_str(), "content": m.content}));
        }
        let body = json!({
            "model": self.models.for_role(call.role),
            "messages": messages,
            "stream": false,
        });
        let reply = self.client.post("/chat/completions", &body).await?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiEmbeddingBackend {
    client: OpenAiClient,
    model: String,
    dimension: usize,
}

impl OpenAiEmbeddingBackend {
    pub fn new(client: OpenAiClient, model: impl Into<String>, dimension: usize) -> Self {
        Self {
            client,
            model: model.into(),
            dimension,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

#[async_trait]
impl EmbeddingBackend for OpenAiEmbeddingBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({"model": self.model, "input": texts});
        let reply = self.client.post("/embeddings", &body).await?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(reply).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(BackendError::InvalidResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|row| row.index.unwrap_or(usize::MAX));
        let mut out = Vec::with_capacity(parsed.data.len());
        for row in parsed.data {
            if row.embedding.len() != self.dimension {
                return Err(BackendError::InvalidResponse(format!(
                    "embedding has {} dimensions, expected {}",
                    row.embedding.len(),
                    self.dimension
                )));
            }
            out.push(row.embedding);
        }
        Ok(out)
    }
}
