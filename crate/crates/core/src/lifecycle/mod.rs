//! Skill evolution: extract candidates from user queries, judge each one
//! against its nearest existing skill, then add, merge or discard.

mod scheduler;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use crate::bank::{BankError, BankScope};
use crate::config::EvolutionConfig;
use crate::ids::IdGenerator;
use crate::llm::{
    complete_structured, parse_extraction_output, parse_judge_output, parse_merge_output, ChatBackend, ChatCall,
    ChatMessage, JudgeAction, JudgeDecision, PromptError, PromptRole, PromptTemplates, Role, Slots,
    StructuredCallError,
};
use crate::retrieval::{
    candidate_query, nearest_neighbors, Bm25Params, HybridWeights, IndexError, SkillIndex, SkillSnapshot,
};
use crate::skill::{dedup_preserving_order, Skill, SkillCandidate};

pub use scheduler::{EvolutionJob, EvolutionScheduler};

#[derive(Debug, thiserror::Error)]
pub enum LifecycleError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Call(#[from] StructuredCallError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("merge target {0} is not in the bank")]
    UnknownTarget(String),
    #[error("merged skill is invalid: {0}")]
    InvalidMerge(String),
}

/// The most recent user queries of one conversation, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceWindow {
    pub user_id: String,
    pub queries: Vec<String>,
    pub window_size: usize,
}

impl EvidenceWindow {
    /// Keep the last `window_size` user messages; everything else,
    /// assistant replies included, is dropped.
    pub fn from_messages(user_id: impl Into<String>, messages: &[ChatMessage], window_size: usize) -> Self {
        let users: Vec<&ChatMessage> = messages.iter().filter(|m| m.role == Role::User).collect();
        let start = users.len().saturating_sub(window_size);
        Self {
            user_id: user_id.into(),
            queries: users[start..].iter().map(|m| m.content.clone()).collect(),
            window_size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Numbered list, newest query last.
    pub fn render(&self) -> String {
        self.queries
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {}", i + 1, q))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A judge verdict with the candidate it concerns and the neighbour it was
/// compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceAction {
    pub decision: JudgeDecision,
    pub candidate: SkillCandidate,
    pub neighbor: Option<(BankScope, Skill)>,
}

impl MaintenanceAction {
    pub fn add(candidate: SkillCandidate, reason: impl Into<String>) -> Self {
        Self {
            decision: JudgeDecision::add(reason),
            candidate,
            neighbor: None,
        }
    }

    pub fn discard(candidate: SkillCandidate, neighbor: Option<(BankScope, Skill)>, reason: impl Into<String>) -> Self {
        Self {
            decision: JudgeDecision::discard(reason),
            candidate,
            neighbor,
        }
    }

    pub fn merge(candidate: SkillCandidate, scope: BankScope, target: Skill, reason: impl Into<String>) -> Self {
        Self {
            decision: JudgeDecision::merge(target.id.to_string(), reason),
            candidate,
            neighbor: Some((scope, target)),
        }
    }
}

/// What a maintenance action did to the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum UpdateOutcome {
    Added { id: Uuid, version: String },
    Merged { id: Uuid, version: String },
    Discarded { reason: String },
}

/// One candidate's path through judge and update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate: String,
    pub confidence: f64,
    pub action: JudgeAction,
    pub target_skill_id: Option<String>,
    pub reason: String,
    pub result_id: Option<Uuid>,
    pub result_version: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub user_id: String,
    pub queries: Vec<String>,
    pub extracted: usize,
    pub below_confidence: usize,
    pub candidates: Vec<CandidateReport>,
    /// Set when extraction itself failed and the turn was skipped.
    pub error: Option<String>,
}

impl EvolutionReport {
    pub fn count(&self, action: JudgeAction) -> usize {
        self.candidates
            .iter()
            .filter(|c| c.action == action && c.error.is_none())
            .count()
    }
}

/// Serializes bank writes per user across evolution and manual edits.
#[derive(Debug, Default)]
pub struct UserLocks {
    locks: Mutex<HashMap<BankScope, Arc<tokio::sync::Mutex<()>>>>,
}

impl UserLocks {
    pub fn for_scope(&self, scope: &BankScope) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("user locks poisoned")
            .entry(scope.clone())
            .or_default()
            .clone()
    }
}

/// Everything the evolution loop needs.
pub struct Evolver {
    pub index: Arc<SkillIndex>,
    pub chat: Arc<dyn ChatBackend>,
    pub templates: Arc<PromptTemplates>,
    pub weights: HybridWeights,
    pub bm25: Bm25Params,
    pub config: EvolutionConfig,
    pub include_common: bool,
    pub ids: Arc<IdGenerator>,
    pub locks: Arc<UserLocks>,
}

fn skill_json(skill: &Skill) -> String {
    serde_json::to_string_pretty(&json!({
        "id": skill.id.to_string(),
        "name": skill.name,
        "description": skill.description,
        "prompt": skill.prompt,
        "triggers": skill.triggers,
        "tags": skill.tags,
        "examples": skill.examples,
        "version": skill.version.to_string(),
    }))
    .expect("skill serializes")
}

fn candidate_json(candidate: &SkillCandidate) -> String {
    serde_json::to_string_pretty(&json!({
        "name": candidate.name,
        "description": candidate.description,
        "prompt": candidate.prompt,
        "triggers": candidate.triggers,
        "tags": candidate.tags,
        "examples": candidate.examples,
        "confidence": candidate.confidence,
    }))
    .expect("candidate serializes")
}

impl Evolver {
    pub fn scopes_for(&self, user: &BankScope) -> Vec<BankScope> {
        let mut scopes = vec![user.clone()];
        if self.include_common {
            scopes.push(BankScope::Common);
        }
        scopes
    }

    fn call(&self, role: PromptRole, slots: Slots) -> Result<ChatCall, PromptError> {
        Ok(ChatCall::from_prompt(role, self.templates.render(role, &slots)?))
    }

    /// Candidates at or above the confidence floor, in extraction order,
    /// plus how many fell below it.
    pub async fn extract_candidates(
        &self,
        window: &EvidenceWindow,
    ) -> Result<(Vec<SkillCandidate>, usize), LifecycleError> {
        let call = self.call(PromptRole::Extract, Slots::from([("queries", window.render())]))?;
        let all = complete_structured(self.chat.as_ref(), &call, parse_extraction_output).await?;
        let total = all.len();
        let kept: Vec<SkillCandidate> = all
            .into_iter()
            .filter(|c| c.confidence >= self.config.min_confidence)
            .collect();
        let below = total - kept.len();
        Ok((kept, below))
    }

    /// Compare `candidate` with its nearest neighbour in `snapshot`. Never
    /// fails: any error turns into a discard.
    pub async fn judge_candidate(&self, candidate: &SkillCandidate, snapshot: &SkillSnapshot) -> MaintenanceAction {
        if snapshot.is_empty() {
            return MaintenanceAction::add(candidate.clone(), "bank is empty");
        }
        let query = candidate_query(candidate);
        let embedding = match self.index.embed(std::slice::from_ref(&query)).await {
            Ok(mut rows) => rows.remove(0),
            Err(e) => {
                tracing::warn!(error = %e, "candidate embedding failed, discarding");
                return MaintenanceAction::discard(candidate.clone(), None, format!("embedding failed: {e}"));
            }
        };
        let existing = snapshot.rank_candidates();
        let (neighbors, best) = match nearest_neighbors(
            &query,
            &embedding,
            &existing,
            self.weights.alpha,
            self.weights.m,
            &self.bm25,
        ) {
            Ok(found) => found,
            Err(e) => return MaintenanceAction::discard(candidate.clone(), None, format!("ranking failed: {e}")),
        };
        let best = snapshot
            .get(&best.expect("non-empty snapshot has a best neighbour").id)
            .expect("ranked from snapshot");
        let neighbor = Some((best.scope.clone(), best.skill.clone()));

        let slots = Slots::from([
            ("candidate", candidate_json(candidate)),
            ("neighbor", skill_json(&best.skill)),
        ]);
        let call = match self.call(PromptRole::Judge, slots) {
            Ok(call) => call,
            Err(e) => return MaintenanceAction::discard(candidate.clone(), neighbor, e.to_string()),
        };
        let mut decision = match complete_structured(self.chat.as_ref(), &call, parse_judge_output).await {
            Ok(decision) => decision,
            Err(e) => {
                tracing::warn!(candidate = %candidate.name, error = %e, "judge failed, discarding");
                return MaintenanceAction::discard(candidate.clone(), neighbor, format!("judge failed: {e}"));
            }
        };
        if decision.action == JudgeAction::Merge {
            let target = decision.target_skill_id.clone().unwrap_or_default();
            if !neighbors.iter().any(|n| n.id.to_string() == target) {
                tracing::warn!(%target, nearest = %best.skill.id, "merge target outside the neighbour set, using nearest");
                decision.target_skill_id = Some(best.skill.id.to_string());
            }
        }
        let decision_neighbor = match (&decision.action, &decision.target_skill_id) {
            (JudgeAction::Merge, Some(target)) => snapshot
                .iter()
                .find(|s| &s.skill.id.to_string() == target)
                .map(|s| (s.scope.clone(), s.skill.clone())),
            _ => neighbor,
        };
        MaintenanceAction {
            decision,
            candidate: candidate.clone(),
            neighbor: decision_neighbor,
        }
    }

    /// Fuse `candidate` into `existing` through the merge prompt. The
    /// result keeps the id and carries the next patch version.
    pub async fn merge_skills(&self, existing: &Skill, candidate: &SkillCandidate) -> Result<Skill, LifecycleError> {
        let slots = Slots::from([
            ("existing", skill_json(existing)),
            ("candidate", candidate_json(candidate)),
        ]);
        let call = self.call(PromptRole::Merge, slots)?;
        let merged = complete_structured(self.chat.as_ref(), &call, parse_merge_output).await?;
        let skill = Skill {
            id: existing.id,
            name: merged.name,
            description: merged.description,
            prompt: merged.prompt,
            triggers: dedup_preserving_order(merged.triggers),
            tags: dedup_preserving_order(merged.tags),
            examples: dedup_preserving_order(merged.examples),
            version: existing.version.bump_patch(),
            confidence: existing.confidence,
            extra: existing.extra.clone(),
        };
        skill
            .validate()
            .map_err(|e| LifecycleError::InvalidMerge(e.to_string()))?;
        Ok(skill)
    }

    /// Apply one action to `user`'s scope. Failures leave the bank as it was.
    pub async fn apply_update(
        &self,
        user: &BankScope,
        action: &MaintenanceAction,
    ) -> Result<UpdateOutcome, LifecycleError> {
        let bank = self.index.bank().clone();
        match action.decision.action {
            JudgeAction::Discard => Ok(UpdateOutcome::Discarded {
                reason: action.decision.reason.clone(),
            }),
            JudgeAction::Add => {
                let skill = Skill::from_candidate(self.ids.next_id(), &action.candidate);
                skill.validate().map_err(BankError::from)?;
                let lock = self.locks.for_scope(user);
                let _guard = lock.lock().await;
                bank.put_skill(user, &skill)?;
                self.index.invalidate(user);
                Ok(UpdateOutcome::Added {
                    id: skill.id,
                    version: skill.version.to_string(),
                })
            }
            JudgeAction::Merge => {
                let target = action.decision.target_skill_id.clone().unwrap_or_default();
                let (scope, _) = action
                    .neighbor
                    .as_ref()
                    .ok_or_else(|| LifecycleError::UnknownTarget(target.clone()))?;
                if scope != user {
                    tracing::warn!(%target, %scope, "refusing to merge into a skill outside the user's scope");
                    return Ok(UpdateOutcome::Discarded {
                        reason: format!("merge into {scope} skill {target} refused"),
                    });
                }
                let id: Uuid = target
                    .parse()
                    .map_err(|_| LifecycleError::UnknownTarget(target.clone()))?;
                let lock = self.locks.for_scope(user);
                let _guard = lock.lock().await;
                // Merge against the stored artifact, not the possibly older snapshot copy.
                let existing = bank
                    .get_skill(user, &id)?
                    .ok_or_else(|| LifecycleError::UnknownTarget(target.clone()))?;
                let merged = self.merge_skills(&existing, &action.candidate).await?;
                bank.put_skill(user, &merged)?;
                self.index.invalidate(user);
                Ok(UpdateOutcome::Merged {
                    id: merged.id,
                    version: merged.version.to_string(),
                })
            }
        }
    }

    /// Run extract, judge and apply for the latest turn of a conversation.
    /// Errors are recorded in the report, never returned.
    pub async fn evolve_turn(&self, user_id: &str, messages: &[ChatMessage]) -> EvolutionReport {
        let window = EvidenceWindow::from_messages(user_id, messages, self.config.window);
        let mut report = EvolutionReport {
            user_id: user_id.to_string(),
            queries: window.queries.clone(),
            ..EvolutionReport::default()
        };
        let user = match BankScope::user(user_id) {
            Ok(scope) => scope,
            Err(e) => {
                report.error = Some(e.to_string());
                return report;
            }
        };
        if window.is_empty() {
            report.error = Some("no user queries in the conversation".into());
            return report;
        }
        let candidates = match self.extract_candidates(&window).await {
            Ok((candidates, below)) => {
                report.extracted = candidates.len() + below;
                report.below_confidence = below;
                candidates
            }
            Err(e) => {
                tracing::warn!(user = user_id, error = %e, "extraction failed, skipping evolution for this turn");
                report.error = Some(format!("extraction failed: {e}"));
                return report;
            }
        };
        let scopes = self.scopes_for(&user);
        for candidate in candidates {
            let entry = self.process_candidate(&user, &scopes, candidate).await;
            tracing::info!(target: "autoskill::evolution", user = user_id, "{}", serde_json::to_string(&entry).expect("report serializes"));
            report.candidates.push(entry);
        }
        report
    }

    async fn process_candidate(
        &self,
        user: &BankScope,
        scopes: &[BankScope],
        candidate: SkillCandidate,
    ) -> CandidateReport {
        let mut entry = CandidateReport {
            candidate: candidate.name.clone(),
            confidence: candidate.confidence,
            action: JudgeAction::Discard,
            target_skill_id: None,
            reason: String::new(),
            result_id: None,
            result_version: None,
            error: None,
        };
        // Each candidate sees the bank as left by the previous one.
        let snapshot = match self.index.snapshot(scopes).await {
            Ok(snapshot) => snapshot,
            Err(e) => {
                entry.reason = "bank unavailable".into();
                entry.error = Some(e.to_string());
                return entry;
            }
        };
        let action = self.judge_candidate(&candidate, &snapshot).await;
        entry.action = action.decision.action;
        entry.target_skill_id = action.decision.target_skill_id.clone();
        entry.reason = action.decision.reason.clone();
        match self.apply_update(user, &action).await {
            Ok(UpdateOutcome::Added { id, version }) | Ok(UpdateOutcome::Merged { id, version }) => {
                entry.result_id = Some(id);
                entry.result_version = Some(version);
            }
            Ok(UpdateOutcome::Discarded { reason }) => {
                entry.action = JudgeAction::Discard;
                entry.reason = reason;
            }
            Err(e) => {
                tracing::warn!(candidate = %candidate.name, error = %e, "update aborted, bank unchanged");
                entry.action = JudgeAction::Discard;
                entry.reason = format!("{} update aborted", action.decision.action.as_str());
                entry.error = Some(e.to_string());
            }
        }
        entry
    }
}
