//! Application configuration: one TOML document plus a few environment
//! overrides. Every tunable default lives here.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::{SkillBank, ROOT_ENV};
use crate::llm::RoleModels;
use crate::retrieval::{Bm25Params, DocumentFields, HybridWeights};

pub const UPSTREAM_KEY_ENV: &str = "AUTOSKILL_UPSTREAM_KEY";
pub const LISTEN_ENV: &str = "AUTOSKILL_LISTEN";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub bank: BankConfig,
    pub retrieval: HybridWeights,
    pub bm25: Bm25Params,
    pub documents: DocumentFields,
    pub evolution: EvolutionConfig,
    pub serving: ServingConfig,
    pub llm: LlmConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Bank root; `$AUTOSKILL_BANK_ROOT` or `./SkillBank` when unset.
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub enabled: bool,
    /// Number of most recent user queries used as extraction evidence.
    pub window: usize,
    pub min_confidence: f64,
    /// Run evolution after every n-th user turn of a conversation.
    pub every_n_turns: usize,
    /// Seed for skill ids. Unset means random v4 ids.
    pub id_seed: Option<u64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 6,
            min_confidence: 0.6,
            every_n_turns: 1,
            id_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingConfig {
    /// Messages of history given to the rewriter.
    pub history_messages: usize,
    /// Traces kept per user.
    pub trace_capacity: usize,
    pub include_common: bool,
    pub default_user: String,
}

impl Default for ServingConfig {
    fn default() -> Self {
        Self {
            history_messages: 8,
            trace_capacity: 256,
            include_common: true,
            default_user: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    OpenAi,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    /// Base URL for internal calls; falls back to `server.upstream_base_url`.
    pub base_url: Option<String>,
    pub models: RoleModels,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    /// Scenario file for the mock backend.
    pub mock_scenario: Option<PathBuf>,
    /// Directory of prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::OpenAi,
            base_url: None,
            models: RoleModels::uniform("gpt-4o-mini"),
            embedding_model: "text-embedding-3-small".into(),
            embedding_dimension: 1536,
            mock_scenario: None,
            prompts_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub upstream_base_url: String,
    pub streaming: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8787".into(),
            upstream_base_url: "https://api.openai.com/v1".into(),
            streaming: true,
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Read `path` (defaults when `None`), apply environment overrides and
    /// validate.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_env();
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(ROOT_ENV) {
            self.bank.root = Some(PathBuf::from(root));
        }
        if let Ok(listen) = std::env::var(LISTEN_ENV) {
            self.server.listen = listen;
        }
    }

    pub fn bank_root(&self) -> PathBuf {
        self.bank.root.clone().unwrap_or_else(SkillBank::default_root)
    }

    pub fn llm_base_url(&self) -> &str {
        self.llm.base_url.as_deref().unwrap_or(&self.server.upstream_base_url)
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.server
            .listen
            .parse()
            .map_err(|e| invalid("server.listen", format!("{:?}: {e}", self.server.listen)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval.validate().map_err(|reason| {
            let key = reason.split_whitespace().next().unwrap_or("retrieval").to_string();
            ConfigError::Invalid { key, reason }
        })?;
        self.bm25.validate().map_err(|reason| {
            let key = reason.split_whitespace().next().unwrap_or("bm25").to_string();
            ConfigError::Invalid { key, reason }
        })?;
        if let Some(floor) = self.retrieval.dense_floor {
            if !(-1.0..=1.0).contains(&floor) {
                return Err(invalid("retrieval.dense_floor", "must be in [-1, 1]"));
            }
        }
        let e = &self.evolution;
        if e.window == 0 {
            return Err(invalid("evolution.window", "must be positive"));
        }
        if !(0.0..=1.0).contains(&e.min_confidence) {
            return Err(invalid("evolution.min_confidence", "must be in [0, 1]"));
        }
        if e.every_n_turns == 0 {
            return Err(invalid("evolution.every_n_turns", "must be positive"));
        }
        if self.serving.history_messages == 0 {
            return Err(invalid("serving.history_messages", "must be positive"));
        }
        if self.serving.trace_capacity == 0 {
            return Err(invalid("serving.trace_capacity", "must be positive"));
        }
        if crate::bank::BankScope::user(self.serving.default_user.clone()).is_err() {
            return Err(invalid("serving.default_user", "not a valid user id"));
        }
        if self.llm.embedding_dimension == 0 {
            return Err(invalid("llm.embedding_dimension", "must be positive"));
        }
        if self.llm.models.default.is_empty() {
            return Err(invalid("llm.models.default", "must not be empty"));
        }
        check_http_url("server.upstream_base_url", &self.server.upstream_base_url)?;
        if let Some(url) = &self.llm.base_url {
            check_http_url("llm.base_url", url)?;
        }
        self.listen_addr()?;
        Ok(())
    }
}

fn check_http_url(key: &str, value: &str) -> Result<(), ConfigError> {
    let url = reqwest::Url::parse(value).map_err(|e| invalid(key, format!("{value:?}: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(invalid(key, format!("{value:?} is not an http(s) URL")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::PromptRole;

    #[test]
    fn defaults_validate() {
        let c = AppConfig::default();
        c.validate().unwrap();
        assert_eq!(c.retrieval.k, 3);
        assert_eq!(c.evolution.window, 6);
        assert_eq!(c.serving.history_messages, 8);
        assert_eq!(c.llm_base_url(), "https://api.openai.com/v1");
    }

    #[test]
    fn parses_partial_document() {
        let c = AppConfig::from_toml(
            r#"
            [retrieval]
            eta = 0.5
            [llm]
            backend = "mock"
            [llm.models]
            default = "m"
            overrides = { judge = "big" }
            "#,
        )
        .unwrap();
        assert_eq!(c.retrieval.eta, 0.5);
        assert_eq!(c.retrieval.lambda, 0.7);
        assert_eq!(c.llm.backend, BackendKind::Mock);
        assert_eq!(c.llm.models.for_role(PromptRole::Judge), "big");
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            AppConfig::from_toml("[retrieval]\nlamda = 0.5\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn bad_upstream_url_names_key() {
        let c = AppConfig::from_toml("[server]\nupstream_base_url = \"not a url\"\n").unwrap();
        match c.validate() {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "server.upstream_base_url"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_weights_name_key() {
        let c = AppConfig::from_toml("[retrieval]\neta = 1.5\n").unwrap();
        match c.validate() {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "retrieval.eta"),
            other => panic!("{other:?}"),
        }
    }
}
