//! The foreground turn pipeline: rewrite, retrieve, render, generate, then
//! hand the turn to background evolution.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::bank::{BankScope, SkillBank};
use crate::config::{AppConfig, BackendKind, ConfigError, UPSTREAM_KEY_ENV};
use crate::ids::IdGenerator;
use crate::lifecycle::{EvolutionJob, EvolutionReport, EvolutionScheduler, Evolver, UserLocks};
use crate::llm::{
    BackendError, ChatBackend, ChatCall, ChatMessage, EmbeddingBackend, MockBackend, MockScenario, OpenAiChatBackend,
    OpenAiClient, OpenAiEmbeddingBackend, PromptError, PromptRole, PromptTemplates, Role, Slots,
};
use crate::retrieval::{hybrid_rank, select_topk_threshold, IndexedSkill, ScoredSkill, SkillIndex};
use crate::skill::Skill;

pub const CONTEXT_HEADER: &str = "Retrieved skill list";

#[derive(Debug, thiserror::Error)]
pub enum ServingError {
    #[error("invalid turn: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("generation failed: {0}")]
    Generation(#[from] BackendError),
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load mock scenario {path}: {reason}")]
    Scenario { path: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One user turn: the history plus the current query as the last user
/// message.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnRequest {
    pub user_id: String,
    pub messages: Vec<ChatMessage>,
}

impl TurnRequest {
    pub fn new(user_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            user_id: user_id.into(),
            messages,
        }
    }

    pub fn query(&self) -> Result<&str, ServingError> {
        match self.messages.last() {
            Some(m) if m.role == Role::User => Ok(&m.content),
            Some(_) => Err(ServingError::InvalidRequest(
                "last message must have the user role".into(),
            )),
            None => Err(ServingError::InvalidRequest("no messages".into())),
        }
    }

    pub fn history(&self) -> &[ChatMessage] {
        &self.messages[..self.messages.len().saturating_sub(1)]
    }
}

/// The injected skill context for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedContext {
    pub search_query: String,
    pub blocks: Vec<String>,
    pub text: String,
}

fn render_block(skill: &Skill) -> String {
    format!(
        "name: {}\nid: {}\ndescription: {}\ntags: {}\ntriggers: {}\nprompt:\n{}",
        skill.name,
        skill.id,
        skill.description,
        skill.tags.join(", "),
        skill.triggers.join(", "),
        skill.prompt
    )
}

/// Assemble the context block for `skills`, already in rank order. No
/// skills means no context at all.
pub fn render_context<'a>(search_query: &str, skills: impl IntoIterator<Item = &'a Skill>) -> RenderedContext {
    let blocks: Vec<String> = skills.into_iter().map(render_block).collect();
    let text = if blocks.is_empty() {
        String::new()
    } else {
        format!(
            "{CONTEXT_HEADER}\nSearch query: {search_query}\n\n{}",
            blocks.join("\n\n")
        )
    };
    RenderedContext {
        search_query: search_query.to_string(),
        blocks,
        text,
    }
}

/// `role: content` lines.
pub fn format_history(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("{}: {}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCandidate {
    pub id: Uuid,
    pub name: String,
    pub version: String,
    pub scope: String,
    pub dense_raw: f64,
    pub lexical_raw: f64,
    pub dense_norm: f64,
    pub lexical_norm: f64,
    pub rel: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    pub rewrite_ms: f64,
    pub retrieve_ms: f64,
    pub render_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

/// Everything observable about one served turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub trace_id: u64,
    pub user_id: String,
    pub timestamp_ms: u64,
    pub query: String,
    pub rewritten_query: String,
    pub rewrite_fallback: bool,
    pub eta: f64,
    pub k: usize,
    pub candidates: Vec<TraceCandidate>,
    pub injected: usize,
    pub context: String,
    pub latency: StageLatencies,
    pub evolution_scheduled: bool,
    pub evolution: Option<EvolutionReport>,
    pub error: Option<String>,
}

/// Bounded per-user ring of recent traces.
#[derive(Debug)]
pub struct TraceStore {
    capacity: usize,
    next_id: AtomicU64,
    traces: Mutex<HashMap<String, VecDeque<TurnTrace>>>,
}

impl TraceStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            next_id: AtomicU64::new(1),
            traces: Mutex::default(),
        }
    }

    /// Store `trace` under a fresh id and return the id.
    pub fn push(&self, mut trace: TurnTrace) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        trace.trace_id = id;
        let mut traces = self.traces.lock().expect("trace store poisoned");
        let ring = traces.entry(trace.user_id.clone()).or_default();
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        ring.push_back(trace);
        id
    }

    /// Modify a stored trace; false if it has been evicted.
    pub fn update(&self, user_id: &str, trace_id: u64, f: impl FnOnce(&mut TurnTrace)) -> bool {
        let mut traces = self.traces.lock().expect("trace store poisoned");
        match traces
            .get_mut(user_id)
            .and_then(|ring| ring.iter_mut().find(|t| t.trace_id == trace_id))
        {
            Some(trace) => {
                f(trace);
                true
            }
            None => false,
        }
    }

    /// Oldest first. `None` lists every user.
    pub fn list(&self, user_id: Option<&str>) -> Vec<TurnTrace> {
        let traces = self.traces.lock().expect("trace store poisoned");
        let mut out: Vec<TurnTrace> = match user_id {
            Some(user) => traces
                .get(user)
                .map(|r| r.iter().cloned().collect())
                .unwrap_or_default(),
            None => traces.values().flat_map(|r| r.iter().cloned()).collect(),
        };
        out.sort_by_key(|t| t.trace_id);
        out
    }

    pub fn get(&self, trace_id: u64) -> Option<TurnTrace> {
        let traces = self.traces.lock().expect("trace store poisoned");
        traces
            .values()
            .flat_map(|r| r.iter())
            .find(|t| t.trace_id == trace_id)
            .cloned()
    }
}

/// Result of the retrieval stage.
#[derive(Debug, Clone, Default)]
pub struct Retrieval {
    pub ranked: Vec<(ScoredSkill, IndexedSkill)>,
    pub selected: Vec<IndexedSkill>,
    pub error: Option<String>,
}

/// A turn after rewrite, retrieval and rendering, ready to generate.
#[derive(Debug, Clone)]
pub struct PreparedTurn {
    pub request: TurnRequest,
    pub rewritten_query: String,
    pub rewrite_fallback: bool,
    pub retrieval: Retrieval,
    pub context: RenderedContext,
    pub trace: TurnTrace,
    started: Instant,
}

impl PreparedTurn {
    /// The chat system section with the context block, or `None` when no
    /// skill was selected.
    pub fn system_injection(&self, templates: &PromptTemplates) -> Result<Option<String>, PromptError> {
        if self.context.text.is_empty() {
            return Ok(None);
        }
        let rendered = templates.render(
            PromptRole::Chat,
            &Slots::from([("history", String::new()), ("context", self.context.text.clone())]),
        )?;
        Ok(Some(rendered.system))
    }
}

#[derive(Debug, Clone)]
pub struct TurnResponse {
    pub text: String,
    pub trace: TurnTrace,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Shared state for serving turns and evolving skills.
pub struct Engine {
    config: AppConfig,
    bank: Arc<SkillBank>,
    index: Arc<SkillIndex>,
    chat: Arc<dyn ChatBackend>,
    templates: Arc<PromptTemplates>,
    scheduler: EvolutionScheduler,
    traces: Arc<TraceStore>,
    locks: Arc<UserLocks>,
    turn_order: UserLocks,
}

impl Engine {
    pub fn new(
        config: AppConfig,
        chat: Arc<dyn ChatBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
        templates: PromptTemplates,
    ) -> Self {
        let bank = Arc::new(SkillBank::open(config.bank_root()));
        let index = Arc::new(SkillIndex::new(bank.clone(), embedder, config.documents));
        let templates = Arc::new(templates);
        let locks = Arc::new(UserLocks::default());
        let ids = Arc::new(match config.evolution.id_seed {
            Some(seed) => IdGenerator::seeded(seed),
            None => IdGenerator::random(),
        });
        let evolver = Arc::new(Evolver {
            index: index.clone(),
            chat: chat.clone(),
            templates: templates.clone(),
            weights: config.retrieval.clone(),
            bm25: config.bm25,
            config: config.evolution.clone(),
            include_common: config.serving.include_common,
            ids,
            locks: locks.clone(),
        });
        Self {
            traces: Arc::new(TraceStore::new(config.serving.trace_capacity)),
            scheduler: EvolutionScheduler::new(evolver),
            config,
            bank,
            index,
            chat,
            templates,
            locks,
            turn_order: UserLocks::default(),
        }
    }

    /// Build backends and templates as the configuration describes.
    pub fn from_config(config: AppConfig) -> Result<Self, EngineError> {
        let templates = match &config.llm.prompts_dir {
            Some(dir) => PromptTemplates::load_dir(dir)?,
            None => PromptTemplates::builtin(),
        };
        let (chat, embedder): (Arc<dyn ChatBackend>, Arc<dyn EmbeddingBackend>) = match config.llm.backend {
            BackendKind::Mock => {
                let scenario = match &config.llm.mock_scenario {
                    Some(path) => load_scenario(path)?,
                    None => MockScenario::default(),
                };
                let mock = Arc::new(MockBackend::new(scenario));
                (mock.clone(), mock)
            }
            BackendKind::OpenAi => {
                let client = OpenAiClient::new(config.llm_base_url(), std::env::var(UPSTREAM_KEY_ENV).ok());
                (
                    Arc::new(OpenAiChatBackend::new(client.clone(), config.llm.models.clone())),
                    Arc::new(OpenAiEmbeddingBackend::new(
                        client,
                        config.llm.embedding_model.clone(),
                        config.llm.embedding_dimension,
                    )),
                )
            }
        };
        Ok(Self::new(config, chat, embedder, templates))
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn bank(&self) -> &Arc<SkillBank> {
        &self.bank
    }

    pub fn index(&self) -> &Arc<SkillIndex> {
        &self.index
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn traces(&self) -> &TraceStore {
        &self.traces
    }

    pub fn scheduler(&self) -> &EvolutionScheduler {
        &self.scheduler
    }

    /// Per-user write lock shared with the evolution loop.
    pub fn write_lock(&self, scope: &BankScope) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.for_scope(scope)
    }

    pub fn retrieval_scopes(&self, user: &BankScope) -> Vec<BankScope> {
        self.scheduler.evolver().scopes_for(user)
    }

    /// Rewritten single-line query, or the original when rewriting fails.
    /// The flag is true on fallback.
    pub async fn rewrite_query(&self, query: &str, history: &[ChatMessage]) -> (String, bool) {
        let n = self.config.serving.history_messages;
        let recent = &history[history.len().saturating_sub(n)..];
        let slots = Slots::from([("query", query.to_string()), ("history", format_history(recent))]);
        let call = match self.templates.render(PromptRole::Rewrite, &slots) {
            Ok(prompt) => ChatCall::from_prompt(PromptRole::Rewrite, prompt),
            Err(e) => {
                tracing::warn!(error = %e, "rewrite prompt failed, using the original query");
                return (query.to_string(), true);
            }
        };
        match self.chat.complete(&call).await {
            Ok(reply) => match reply.lines().map(str::trim).find(|l| !l.is_empty()) {
                Some(line) => (line.to_string(), false),
                None => {
                    tracing::warn!("empty rewrite, using the original query");
                    (query.to_string(), true)
                }
            },
            Err(e) => {
                tracing::warn!(error = %e, "rewrite failed, using the original query");
                (query.to_string(), true)
            }
        }
    }

    /// Rank the user's retrieval set against `query` and select the skills
    /// to inject. Failures yield an empty selection.
    pub async fn retrieve_for_turn(&self, query: &str, user: &BankScope) -> Retrieval {
        let scopes = self.retrieval_scopes(user);
        let snapshot = match self.index.snapshot(&scopes).await {
            Ok(snapshot) => snapshot,
            Err(e) => {
                tracing::warn!(error = %e, "skill index unavailable, serving without skills");
                return Retrieval {
                    error: Some(e.to_string()),
                    ..Retrieval::default()
                };
            }
        };
        if snapshot.is_empty() {
            return Retrieval::default();
        }
        let embedding = match self.index.embed(&[query.to_string()]).await {
            Ok(mut rows) => rows.remove(0),
            Err(e) => {
                tracing::warn!(error = %e, "query embedding failed, serving without skills");
                return Retrieval {
                    error: Some(e.to_string()),
                    ..Retrieval::default()
                };
            }
        };
        let weights = &self.config.retrieval;
        let ranked = match hybrid_rank(
            query,
            &embedding,
            &snapshot.rank_candidates(),
            weights.lambda,
            &self.config.bm25,
        ) {
            Ok(ranked) => ranked,
            Err(e) => {
                tracing::warn!(error = %e, "ranking failed, serving without skills");
                return Retrieval {
                    error: Some(e.to_string()),
                    ..Retrieval::default()
                };
            }
        };
        let mut selected_scores = select_topk_threshold(&ranked, weights.k, weights.eta);
        if let Some(floor) = weights.dense_floor {
            selected_scores.retain(|s| s.dense_raw >= floor);
        }
        let lookup = |id: &Uuid| snapshot.get(id).expect("ranked from snapshot").clone();
        Retrieval {
            selected: selected_scores.iter().map(|s| lookup(&s.id)).collect(),
            ranked: ranked
                .into_iter()
                .map(|s| {
                    let skill = lookup(&s.id);
                    (s, skill)
                })
                .collect(),
            error: None,
        }
    }

    /// Rewrite, retrieve and render. The returned trace is not stored yet.
    pub async fn prepare_turn(&self, request: TurnRequest) -> Result<PreparedTurn, ServingError> {
        let started = Instant::now();
        let query = request.query()?.to_string();
        let user = BankScope::user(request.user_id.clone()).map_err(|e| ServingError::InvalidRequest(e.to_string()))?;

        let t = Instant::now();
        let (rewritten, fallback) = self.rewrite_query(&query, request.history()).await;
        let rewrite_ms = elapsed_ms(t);

        let t = Instant::now();
        let retrieval = self.retrieve_for_turn(&rewritten, &user).await;
        let retrieve_ms = elapsed_ms(t);

        let t = Instant::now();
        let context = render_context(&rewritten, retrieval.selected.iter().map(|s| &s.skill));
        let render_ms = elapsed_ms(t);

        let selected: Vec<Uuid> = retrieval.selected.iter().map(|s| s.skill.id).collect();
        let trace = TurnTrace {
            user_id: request.user_id.clone(),
            timestamp_ms: now_ms(),
            query,
            rewritten_query: rewritten.clone(),
            rewrite_fallback: fallback,
            eta: self.config.retrieval.eta,
            k: self.config.retrieval.k,
            candidates: retrieval
                .ranked
                .iter()
                .map(|(s, indexed)| TraceCandidate {
                    id: s.id,
                    name: indexed.skill.name.clone(),
                    version: indexed.skill.version.to_string(),
                    scope: indexed.scope.to_string(),
                    dense_raw: s.dense_raw,
                    lexical_raw: s.lexical_raw,
                    dense_norm: s.dense_norm,
                    lexical_norm: s.lexical_norm,
                    rel: s.rel,
                    selected: selected.contains(&s.id),
                })
                .collect(),
            injected: retrieval.selected.len(),
            context: context.text.clone(),
            latency: StageLatencies {
                rewrite_ms,
                retrieve_ms,
                render_ms,
                ..StageLatencies::default()
            },
            error: retrieval.error.clone(),
            ..TurnTrace::default()
        };
        Ok(PreparedTurn {
            request,
            rewritten_query: rewritten,
            rewrite_fallback: fallback,
            retrieval,
            context,
            trace,
            started,
        })
    }

    /// Store the trace of a completed turn and queue evolution for it.
    /// `generate_ms` is the time spent producing the reply.
    pub fn complete_turn(&self, prepared: PreparedTurn, generate_ms: f64, error: Option<String>) -> TurnTrace {
        let mut trace = prepared.trace;
        trace.latency.generate_ms = generate_ms;
        trace.latency.total_ms = elapsed_ms(prepared.started);
        if error.is_some() {
            trace.error = error;
        }
        let user_turns = prepared
            .request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .count();
        let evolve = trace.error.is_none()
            && self.config.evolution.enabled
            && user_turns % self.config.evolution.every_n_turns == 0;
        trace.evolution_scheduled = evolve;
        let trace_id = self.traces.push(trace.clone());
        trace.trace_id = trace_id;
        if evolve {
            let user_id = prepared.request.user_id.clone();
            let store_user = user_id.clone();
            let traces = self.traces.clone();
            self.scheduler.schedule(EvolutionJob {
                user_id,
                messages: prepared.request.messages,
                on_done: Some(Box::new(move |report| {
                    traces.update(&store_user, trace_id, |t| t.evolution = Some(report));
                })),
            });
        }
        trace
    }

    /// Serialize turns per user in arrival order.
    pub async fn turn_guard(&self, user_id: &str) -> tokio::sync::OwnedMutexGuard<()> {
        let scope = BankScope::User(user_id.to_string());
        self.turn_order.for_scope(&scope).lock_owned().await
    }

    /// The full pipeline with the configured chat backend generating the
    /// reply from the chat template.
    pub async fn handle_turn(&self, request: TurnRequest) -> Result<TurnResponse, ServingError> {
        let _order = self.turn_guard(&request.user_id).await;
        let prepared = self.prepare_turn(request).await?;
        let t = Instant::now();
        let slots = Slots::from([
            ("history", format_history(&prepared.request.messages)),
            ("context", prepared.context.text.clone()),
        ]);
        let call = ChatCall::from_prompt(PromptRole::Chat, self.templates.render(PromptRole::Chat, &slots)?);
        match self.chat.complete(&call).await {
            Ok(text) => {
                let trace = self.complete_turn(prepared, elapsed_ms(t), None);
                Ok(TurnResponse { text, trace })
            }
            Err(e) => {
                self.complete_turn(prepared, elapsed_ms(t), Some(e.to_string()));
                Err(ServingError::Generation(e))
            }
        }
    }

    /// Wait for queued evolution to finish.
    pub async fn shutdown(&self) {
        self.scheduler.flush().await;
    }
}

fn load_scenario(path: &std::path::Path) -> Result<MockScenario, EngineError> {
    let err = |reason: String| EngineError::Scenario {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}
