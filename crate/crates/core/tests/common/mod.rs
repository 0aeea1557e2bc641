#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use shg::gateway::{Mode, ModelConfig};

pub const TOKEN: &str = "test-token";

pub type Responder = dyn Fn(&Value, usize) -> (u16, Value) + Send + Sync;

pub struct MockState {
    responder: Box<Responder>,
    pub delay: Duration,
    pub hits: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub bodies: Mutex<Vec<Value>>,
}

pub struct Mock {
    pub url: String,
    pub state: Arc<MockState>,
}

impl Mock {
    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<Value> {
        self.state.bodies.lock().unwrap().clone()
    }

    pub fn config(&self, label: &str) -> ModelConfig {
        let mut c = ModelConfig::new(label, &self.url, &format!("org/{label}"), Mode::Standard);
        c.retry.base_backoff_ms = 1;
        c
    }
}

pub fn completion(text: &str) -> Value {
    json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": text },
            "finish_reason": "stop"
        }],
        "usage": { "prompt_tokens": 12, "completion_tokens": 5 }
    })
}

pub fn error_body(message: &str) -> Value {
    json!({ "error": { "message": message } })
}

async fn handle(
    State(state): State<Arc<MockState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let hit = state.hits.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    state.bodies.lock().unwrap().push(body.clone());
    if !state.delay.is_zero() {
        tokio::time::sleep(state.delay).await;
    }
    let authorized = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == format!("Bearer {TOKEN}"));
    let (status, reply) = if authorized {
        (state.responder)(&body, hit)
    } else {
        (401, error_body("invalid API key"))
    };
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(status).unwrap(), Json(reply))
}

/// Serves `POST /v1/chat/completions` on an ephemeral port. Requests must
/// carry `Bearer TOKEN`.
pub async fn serve<F>(delay: Duration, responder: F) -> Mock
where
    F: Fn(&Value, usize) -> (u16, Value) + Send + Sync + 'static,
{
    let state = Arc::new(MockState {
        responder: Box::new(responder),
        delay,
        hits: AtomicUsize::new(0),
        in_flight: AtomicUsize::new(0),
        max_in_flight: AtomicUsize::new(0),
        bodies: Mutex::new(Vec::new()),
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Mock {
        url: format!("http://{addr}/v1"),
        state,
    }
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// User message of a captured request body.
pub fn user_message(body: &Value) -> &str {
    body["messages"][1]["content"].as_str().unwrap_or_default()
}
