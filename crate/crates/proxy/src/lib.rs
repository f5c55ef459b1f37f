//! OpenAI-compatible reverse proxy that retrieves a user's skills into
//! each chat request, plus the admin API over the skill bank and traces.

pub mod admin;
mod error;
mod upstream;
pub mod v1;

use std::future::Future;
use std::sync::Arc;
use std::time::Instant;

use autoskill_core::config::UPSTREAM_KEY_ENV;
use autoskill_core::serving::Engine;
use axum::extract::Request;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use upstream::Upstream;
pub use v1::{inject_system, resolve_user, USER_HEADER};

pub const ACCESS_LOG_TARGET: &str = "autoskill::access";

pub struct ProxyState {
    pub engine: Arc<Engine>,
    pub upstream: Upstream,
}

impl ProxyState {
    pub fn new(engine: Arc<Engine>, upstream_key: Option<String>) -> Self {
        let upstream = Upstream::new(&engine.config().server.upstream_base_url, upstream_key);
        Self { engine, upstream }
    }

    /// Reads the upstream key from the environment.
    pub fn from_env(engine: Arc<Engine>) -> Self {
        Self::new(engine, std::env::var(UPSTREAM_KEY_ENV).ok())
    }
}

/// Set on responses by handlers that resolved a user, for the access log.
#[derive(Debug, Clone)]
pub(crate) struct ResolvedUser(pub String);

async fn access_log(request: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = request.method().to_string();
    let path = request.uri().path().to_string();
    let response = next.run(request).await;
    let user = response.extensions().get::<ResolvedUser>().map(|u| u.0.clone());
    let line = json!({
        "method": method,
        "path": path,
        "status": response.status().as_u16(),
        "latency_ms": started.elapsed().as_secs_f64() * 1000.0,
        "user": user,
    });
    tracing::info!(target: ACCESS_LOG_TARGET, "{line}");
    response
}

pub fn router(state: Arc<ProxyState>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(v1::chat_completions))
        .route("/v1/embeddings", post(v1::embeddings))
        .route("/v1/models", get(v1::models))
        .route("/admin/skills", get(admin::list_skills))
        .route(
            "/admin/skills/{id}",
            get(admin::get_skill).put(admin::put_skill).delete(admin::delete_skill),
        )
        .route("/admin/traces", get(admin::list_traces))
        .route("/admin/traces/{id}", get(admin::get_trace))
        .route("/admin/config", get(admin::config))
        .layer(middleware::from_fn(access_log))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then let queued evolution finish.
pub async fn serve(
    listener: TcpListener,
    state: Arc<ProxyState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let engine = state.engine.clone();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    engine.shutdown().await;
    Ok(())
}
