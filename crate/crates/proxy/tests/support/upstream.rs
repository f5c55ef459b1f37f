//! A recording stand-in for an OpenAI-compatible upstream.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::Value;

pub const CHAT_FIXTURE: &str = include_str!("../fixtures/chat_completion.json");
pub const EMBEDDINGS_FIXTURE: &str = include_str!("../fixtures/embeddings.json");
pub const MODELS_FIXTURE: &str = include_str!("../fixtures/models.json");
pub const STREAM_FIXTURE: &str = include_str!("../fixtures/chat_stream.txt");

/// Requests with this model get a 429.
pub const RATE_LIMITED_MODEL: &str = "rate-limited";

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Bytes,
}

impl Recorded {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

#[derive(Default)]
struct Inner {
    requests: Mutex<Vec<Recorded>>,
    chat_delay: Duration,
}

#[derive(Clone)]
pub struct MockUpstream {
    inner: Arc<Inner>,
    pub addr: SocketAddr,
}

impl MockUpstream {
    pub async fn start() -> Self {
        Self::with_chat_delay(Duration::ZERO).await
    }

    pub async fn with_chat_delay(chat_delay: Duration) -> Self {
        let inner = Arc::new(Inner {
            chat_delay,
            ..Inner::default()
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .route("/v1/embeddings", post(embeddings))
            .route("/v1/models", get(models))
            .with_state(inner.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self { inner, addr }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.inner.requests.lock().unwrap().clone()
    }
}

fn record(inner: &Inner, path: &str, headers: &HeaderMap, body: Bytes) -> Value {
    let json = serde_json::from_slice(&body).unwrap_or(Value::Null);
    inner.requests.lock().unwrap().push(Recorded {
        path: path.to_string(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
        body,
    });
    json
}

fn json_response(status: StatusCode, body: &'static str) -> Response {
    (status, [("content-type", "application/json")], body).into_response()
}

const RATE_LIMIT_BODY: &str =
    r#"{"error":{"message":"Rate limit reached","type":"requests","code":"rate_limit_exceeded"}}"#;

async fn chat(State(inner): State<Arc<Inner>>, headers: HeaderMap, body: Bytes) -> Response {
    let json = record(&inner, "/chat/completions", &headers, body);
    if json["model"] == RATE_LIMITED_MODEL {
        return json_response(StatusCode::TOO_MANY_REQUESTS, RATE_LIMIT_BODY);
    }
    if !inner.chat_delay.is_zero() {
        tokio::time::sleep(inner.chat_delay).await;
    }
    if json["stream"] == true {
        let events: Vec<String> = STREAM_FIXTURE.split_inclusive("\n\n").map(str::to_string).collect();
        let stream = futures::stream::unfold(events.into_iter(), |mut it| async move {
            let next = it.next()?;
            tokio::time::sleep(Duration::from_millis(15)).await;
            Some((Ok::<_, std::convert::Infallible>(Bytes::from(next)), it))
        });
        return Response::builder()
            .header("content-type", "text/event-stream")
            .body(Body::from_stream(stream))
            .unwrap();
    }
    json_response(StatusCode::OK, CHAT_FIXTURE)
}

async fn embeddings(State(inner): State<Arc<Inner>>, headers: HeaderMap, body: Bytes) -> Response {
    let json = record(&inner, "/embeddings", &headers, body);
    if json["model"] == RATE_LIMITED_MODEL {
        return json_response(StatusCode::TOO_MANY_REQUESTS, RATE_LIMIT_BODY);
    }
    json_response(StatusCode::OK, EMBEDDINGS_FIXTURE)
}

async fn models(State(inner): State<Arc<Inner>>, headers: HeaderMap) -> Response {
    record(&inner, "/models", &headers, Bytes::new());
    json_response(StatusCode::OK, MODELS_FIXTURE)
}
