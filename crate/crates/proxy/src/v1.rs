//! `/v1` endpoints: chat completions with skill injection, plus plain
//! passthrough for embeddings and models.

use std::sync::Arc;
use std::time::Instant;

use autoskill_core::bank::normalize_user_id;
use autoskill_core::llm::{ChatMessage, Role};
use autoskill_core::serving::{ServingError, TurnRequest};
use axum::extract::State;
use axum::http::{HeaderMap, Method};
use axum::response::{IntoResponse, Response};
use bytes::Bytes;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::upstream::{buffer, relay_buffered, relay_stream};
use crate::{ProxyState, ResolvedUser};

pub const USER_HEADER: &str = "x-autoskill-user";

/// Header first, then the body's `user` field, then `default_user`.
/// Whatever is picked goes through the slug rules so it is a safe
/// directory name.
pub fn resolve_user(headers: &HeaderMap, payload: &Value, default_user: &str) -> String {
    let from_header = headers
        .get(USER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty());
    let from_body = payload
        .get("user")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty());
    from_header
        .or(from_body)
        .and_then(normalize_user_id)
        .unwrap_or_else(|| default_user.to_string())
}

/// Plain text of a message's `content`, which may be a string or a list of
/// typed parts.
fn content_text(content: &Value) -> Option<String> {
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            (!texts.is_empty()).then(|| texts.join("\n"))
        }
        _ => None,
    }
}

fn check_chat_payload(payload: &Value) -> Result<&Vec<Value>, ApiError> {
    let obj = payload
        .as_object()
        .ok_or_else(|| ApiError::bad_request("body must be a JSON object"))?;
    if !obj.get("model").is_some_and(Value::is_string) {
        return Err(ApiError::bad_request("`model` must be a string"));
    }
    let messages = obj
        .get("messages")
        .and_then(Value::as_array)
        .filter(|m| !m.is_empty())
        .ok_or_else(|| ApiError::bad_request("`messages` must be a non-empty array"))?;
    for (i, m) in messages.iter().enumerate() {
        if !m.get("role").is_some_and(Value::is_string) {
            return Err(ApiError::bad_request(format!("messages[{i}].role must be a string")));
        }
        match m.get("content") {
            None | Some(Value::Null | Value::String(_) | Value::Array(_)) => {}
            Some(_) => {
                return Err(ApiError::bad_request(format!(
                    "messages[{i}].content must be a string or an array"
                )))
            }
        }
    }
    if let Some(stream) = obj.get("stream") {
        if !stream.is_boolean() && !stream.is_null() {
            return Err(ApiError::bad_request("`stream` must be a boolean"));
        }
    }
    Ok(messages)
}

/// The user and assistant text turns. Other roles carry no skill evidence.
fn turn_messages(messages: &[Value]) -> Vec<ChatMessage> {
    messages
        .iter()
        .filter_map(|m| {
            let role = match m["role"].as_str()? {
                "user" => Role::User,
                "assistant" => Role::Assistant,
                _ => return None,
            };
            Some(ChatMessage::new(role, content_text(m.get("content")?)?))
        })
        .collect()
}

/// Append `injection` to the leading system message, adding one if needed.
pub fn inject_system(payload: &mut Value, injection: &str) {
    let messages = payload["messages"].as_array_mut().expect("checked payload");
    if let Some(first) = messages.first_mut().filter(|m| m["role"] == "system") {
        match first.get_mut("content") {
            Some(Value::String(s)) if !s.is_empty() => {
                s.push_str("\n\n");
                s.push_str(injection);
            }
            Some(Value::Array(parts)) => parts.push(json!({"type": "text", "text": injection})),
            _ => first["content"] = json!(injection),
        }
    } else {
        messages.insert(0, json!({"role": "system", "content": injection}));
    }
}

fn parse_json(body: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn tag_user(mut response: Response, user: String) -> Response {
    response.extensions_mut().insert(ResolvedUser(user));
    response
}

pub async fn chat_completions(State(state): State<Arc<ProxyState>>, headers: HeaderMap, body: Bytes) -> Response {
    let mut payload = match parse_json(&body) {
        Ok(v) => v,
        Err(e) => return e.into_response(),
    };
    let messages = match check_chat_payload(&payload) {
        Ok(m) => turn_messages(m),
        Err(e) => return e.into_response(),
    };
    let engine = &state.engine;
    let user = resolve_user(&headers, &payload, &engine.config().serving.default_user);
    let response = match chat_inner(&state, &headers, &mut payload, body, messages, &user).await {
        Ok(r) => r,
        Err(e) => e.into_response(),
    };
    tag_user(response, user)
}

async fn chat_inner(
    state: &ProxyState,
    headers: &HeaderMap,
    payload: &mut Value,
    body: Bytes,
    messages: Vec<ChatMessage>,
    user: &str,
) -> Result<Response, ApiError> {
    let auth = state
        .upstream
        .authorization(headers)
        .ok_or_else(ApiError::unauthorized)?;
    let streaming = payload.get("stream").and_then(Value::as_bool).unwrap_or(false);
    let engine = &state.engine;
    if streaming && !engine.config().server.streaming {
        return Err(ApiError::bad_request(
            "streaming is disabled on this proxy (server.streaming)",
        ));
    }

    let request = TurnRequest::new(user, messages);
    if request.query().is_err() {
        // Nothing to retrieve for (tool results, assistant prefill): forward as is.
        let upstream = state
            .upstream
            .send(Method::POST, "/chat/completions", Some(auth), Some(body))
            .await
            .map_err(|e| ApiError::bad_gateway(format!("upstream unreachable: {e}")))?;
        return Ok(relay_stream(upstream));
    }

    let _order = engine.turn_guard(user).await;
    let prepared = engine.prepare_turn(request).await.map_err(|e| match e {
        ServingError::InvalidRequest(m) => ApiError::bad_request(m),
        other => ApiError::internal(other.to_string()),
    })?;
    let forwarded = match prepared.system_injection(engine.templates()) {
        Ok(Some(injection)) => {
            inject_system(payload, &injection);
            Bytes::from(serde_json::to_vec(payload).expect("json value serializes"))
        }
        Ok(None) => body,
        Err(e) => return Err(ApiError::internal(e.to_string())),
    };

    let t = Instant::now();
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1000.0;
    let upstream = match state
        .upstream
        .send(Method::POST, "/chat/completions", Some(auth), Some(forwarded))
        .await
    {
        Ok(r) => r,
        Err(e) => {
            let message = format!("upstream unreachable: {e}");
            engine.complete_turn(prepared, ms(t), Some(message.clone()));
            return Err(ApiError::bad_gateway(message));
        }
    };
    let status = upstream.status();
    if streaming && status.is_success() {
        // The reply is not evidence, so evolution can start before it ends.
        engine.complete_turn(prepared, ms(t), None);
        return Ok(relay_stream(upstream));
    }
    match buffer(upstream).await {
        Ok((status, headers, bytes)) => {
            let error = (!status.is_success()).then(|| format!("upstream returned {status}"));
            engine.complete_turn(prepared, ms(t), error);
            Ok(relay_buffered(status, headers, bytes))
        }
        Err(e) => {
            let message = format!("upstream body failed: {e}");
            engine.complete_turn(prepared, ms(t), Some(message.clone()));
            Err(ApiError::bad_gateway(message))
        }
    }
}

pub async fn embeddings(
    State(state): State<Arc<ProxyState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let payload = parse_json(&body)?;
    let obj = payload
        .as_object()
        .ok_or_else(|| ApiError::bad_request("body must be a JSON object"))?;
    if !obj.get("model").is_some_and(Value::is_string) {
        return Err(ApiError::bad_request("`model` must be a string"));
    }
    if !obj.get("input").is_some_and(|v| v.is_string() || v.is_array()) {
        return Err(ApiError::bad_request("`input` must be a string or an array"));
    }
    let upstream = state
        .upstream
        .send(
            Method::POST,
            "/embeddings",
            state.upstream.authorization(&headers),
            Some(body),
        )
        .await
        .map_err(|e| ApiError::bad_gateway(format!("upstream unreachable: {e}")))?;
    Ok(relay_stream(upstream))
}

pub async fn models(State(state): State<Arc<ProxyState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    let upstream = state
        .upstream
        .send(Method::GET, "/models", state.upstream.authorization(&headers), None)
        .await
        .map_err(|e| ApiError::bad_gateway(format!("upstream unreachable: {e}")))?;
    Ok(relay_stream(upstream))
}
