//! `/admin` endpoints for inspecting and editing skills and traces.

use std::sync::Arc;

use autoskill_core::bank::BankScope;
use autoskill_core::skill::{bump_patch, Skill};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::error::ApiError;
use crate::v1::resolve_user;
use crate::ProxyState;

#[derive(Debug, Default, Deserialize)]
pub struct ScopeQuery {
    pub user: Option<String>,
    /// `user` (default) or `common`.
    pub scope: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SkillView {
    pub scope: String,
    pub slug: String,
    #[serde(flatten)]
    pub skill: Skill,
}

/// A full-artifact edit. Server-managed fields may be echoed back but are
/// not taken from the body.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkillEdit {
    #[serde(default)]
    id: Option<Uuid>,
    name: String,
    #[serde(default)]
    description: String,
    prompt: String,
    #[serde(default)]
    triggers: Vec<String>,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    examples: Vec<String>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<Value>,
    #[serde(default)]
    #[allow(dead_code)]
    scope: Option<Value>,
    #[serde(default)]
    #[allow(dead_code)]
    slug: Option<Value>,
}

fn user_scope(state: &ProxyState, q: &ScopeQuery) -> Result<BankScope, ApiError> {
    let default_user = &state.engine.config().serving.default_user;
    let body = match &q.user {
        Some(u) => json!({ "user": u }),
        None => json!({}),
    };
    let user = resolve_user(&HeaderMap::new(), &body, default_user);
    BankScope::user(user).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// The scopes to search, most specific first.
fn scopes(state: &ProxyState, q: &ScopeQuery) -> Result<Vec<BankScope>, ApiError> {
    match q.scope.as_deref() {
        Some("common") => Ok(vec![BankScope::Common]),
        None | Some("user") => {
            let mut out = vec![user_scope(state, q)?];
            if state.engine.config().serving.include_common {
                out.push(BankScope::Common);
            }
            Ok(out)
        }
        Some(other) => Err(ApiError::bad_request(format!("unknown scope {other:?}"))),
    }
}

fn parse_id(raw: &str) -> Result<Uuid, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::not_found(format!("no skill {raw:?}")))
}

fn slug_of(state: &ProxyState, scope: &BankScope, id: &Uuid) -> Result<String, ApiError> {
    let dir = state.engine.bank().artifact_dir(scope, id)?;
    Ok(dir
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default())
}

fn find(state: &ProxyState, q: &ScopeQuery, id: &Uuid) -> Result<(BankScope, Skill), ApiError> {
    for scope in scopes(state, q)? {
        if let Some(skill) = state.engine.bank().get_skill(&scope, id)? {
            return Ok((scope, skill));
        }
    }
    Err(ApiError::not_found(format!("no skill {id}")))
}

fn view(state: &ProxyState, scope: &BankScope, skill: Skill) -> Result<SkillView, ApiError> {
    Ok(SkillView {
        scope: scope.to_string(),
        slug: slug_of(state, scope, &skill.id)?,
        skill,
    })
}

pub async fn list_skills(
    State(state): State<Arc<ProxyState>>,
    Query(q): Query<ScopeQuery>,
) -> Result<Json<Value>, ApiError> {
    let mut skills = Vec::new();
    let mut warnings = Vec::new();
    for scope in scopes(&state, &q)? {
        let listing = state.engine.bank().list_skills(&scope)?;
        for stored in listing.skills {
            skills.push(SkillView {
                scope: scope.to_string(),
                slug: stored.slug,
                skill: stored.skill,
            });
        }
        warnings.extend(
            listing
                .warnings
                .into_iter()
                .map(|w| json!({"path": w.path, "message": w.message})),
        );
    }
    Ok(Json(json!({ "skills": skills, "warnings": warnings })))
}

pub async fn get_skill(
    State(state): State<Arc<ProxyState>>,
    Path(id): Path<String>,
    Query(q): Query<ScopeQuery>,
) -> Result<Json<SkillView>, ApiError> {
    let id = parse_id(&id)?;
    let (scope, skill) = find(&state, &q, &id)?;
    Ok(Json(view(&state, &scope, skill)?))
}

/// Replace a skill's content. The patch version is bumped when anything
/// user-visible changes.
pub async fn put_skill(
    State(state): State<Arc<ProxyState>>,
    Path(id): Path<String>,
    Query(q): Query<ScopeQuery>,
    body: Bytes,
) -> Result<Json<SkillView>, ApiError> {
    let id = parse_id(&id)?;
    let edit: SkillEdit =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid skill body: {e}")))?;
    if edit.id.is_some_and(|body_id| body_id != id) {
        return Err(ApiError::bad_request("body id does not match the path"));
    }
    let (scope, _) = find(&state, &q, &id)?;
    let engine = &state.engine;
    let lock = engine.write_lock(&scope);
    let _guard = lock.lock().await;

    let current = engine
        .bank()
        .get_skill(&scope, &id)?
        .ok_or_else(|| ApiError::not_found(format!("no skill {id}")))?;
    let mut next = Skill {
        name: edit.name,
        description: edit.description,
        prompt: edit.prompt,
        triggers: edit.triggers,
        tags: edit.tags,
        examples: edit.examples,
        confidence: edit.confidence.or(current.confidence),
        ..current.clone()
    };
    if let Err(violation) = next.validate() {
        let mut err = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invariant_violation",
            violation.to_string(),
        );
        err.code = Some(violation.code());
        err.field = Some(violation.field());
        return Err(err);
    }
    let changed = next.content_differs(&current) || next.confidence != current.confidence;
    if next.content_differs(&current) {
        next.version = bump_patch(current.version);
    }
    if changed {
        engine.bank().put_skill(&scope, &next)?;
        engine.index().invalidate(&scope);
    }
    Ok(Json(view(&state, &scope, next)?))
}

pub async fn delete_skill(
    State(state): State<Arc<ProxyState>>,
    Path(id): Path<String>,
    Query(q): Query<ScopeQuery>,
) -> Result<Json<Value>, ApiError> {
    let id = parse_id(&id)?;
    let (scope, _) = find(&state, &q, &id)?;
    let engine = &state.engine;
    let lock = engine.write_lock(&scope);
    let _guard = lock.lock().await;
    if !engine.bank().delete_skill(&scope, &id)? {
        return Err(ApiError::not_found(format!("no skill {id}")));
    }
    engine.index().invalidate(&scope);
    Ok(Json(json!({ "deleted": id, "scope": scope.to_string() })))
}

#[derive(Debug, Default, Deserialize)]
pub struct TraceQuery {
    pub user: Option<String>,
}

pub async fn list_traces(State(state): State<Arc<ProxyState>>, Query(q): Query<TraceQuery>) -> Json<Value> {
    let user = q.user.map(|u| {
        resolve_user(
            &HeaderMap::new(),
            &json!({ "user": u }),
            &state.engine.config().serving.default_user,
        )
    });
    Json(json!({ "traces": state.engine.traces().list(user.as_deref()) }))
}

pub async fn get_trace(State(state): State<Arc<ProxyState>>, Path(id): Path<u64>) -> Result<Json<Value>, ApiError> {
    state
        .engine
        .traces()
        .get(id)
        .map(|t| Json(json!(t)))
        .ok_or_else(|| ApiError::not_found(format!("trace {id} was evicted or never existed")))
}

pub async fn config(State(state): State<Arc<ProxyState>>) -> Json<Value> {
    Json(json!(state.engine.config()))
}
