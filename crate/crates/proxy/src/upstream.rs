use std::time::Duration;

use axum::body::Body;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::Response;
use bytes::Bytes;

/// Response headers that describe one hop and must not be relayed.
const HOP_HEADERS: [&str; 9] = [
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "content-length",
];

/// The OpenAI-compatible service requests are forwarded to.
#[derive(Debug, Clone)]
pub struct Upstream {
    http: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
}

impl Upstream {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .build()
            .expect("http client");
        Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.trim().is_empty()),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// The configured key wins over whatever the client sent.
    pub fn authorization(&self, client: &HeaderMap) -> Option<HeaderValue> {
        match &self.api_key {
            Some(key) => HeaderValue::from_str(&format!("Bearer {key}")).ok(),
            None => client.get(header::AUTHORIZATION).cloned(),
        }
    }

    pub async fn send(
        &self,
        method: Method,
        path: &str,
        auth: Option<HeaderValue>,
        body: Option<Bytes>,
    ) -> reqwest::Result<reqwest::Response> {
        let mut request = self.http.request(method, format!("{}{}", self.base_url, path));
        if let Some(auth) = auth {
            request = request.header(header::AUTHORIZATION, auth);
        }
        if let Some(body) = body {
            request = request.header(header::CONTENT_TYPE, "application/json").body(body);
        }
        request.send().await
    }
}

fn relay_headers(upstream: &reqwest::Response) -> HeaderMap {
    let mut headers = upstream.headers().clone();
    for name in HOP_HEADERS {
        headers.remove(name);
    }
    headers
}

fn with_parts(status: StatusCode, headers: HeaderMap, body: Body) -> Response {
    let mut response = Response::new(body);
    *response.status_mut() = status;
    *response.headers_mut() = headers;
    response
}

/// Relay status, headers and a streamed body.
pub fn relay_stream(upstream: reqwest::Response) -> Response {
    let status = upstream.status();
    let headers = relay_headers(&upstream);
    with_parts(status, headers, Body::from_stream(upstream.bytes_stream()))
}

/// Relay status and headers around an already buffered body.
pub fn relay_buffered(status: StatusCode, headers: HeaderMap, body: Bytes) -> Response {
    with_parts(status, headers, Body::from(body))
}

/// Read a whole upstream response.
pub async fn buffer(upstream: reqwest::Response) -> reqwest::Result<(StatusCode, HeaderMap, Bytes)> {
    let status = upstream.status();
    let headers = relay_headers(&upstream);
    let body = upstream.bytes().await?;
    Ok((status, headers, body))
}
