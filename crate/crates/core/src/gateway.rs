//! Chat-completion client for OpenAI-compatible endpoints (OpenRouter and
//! friends) with bounded retries and a per-model in-flight cap.

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::prompting::{Message, MessageSequence, Role};

pub const DEFAULT_API_KEY_ENV: &str = "SHG_API_KEY";
pub const OPENROUTER_URL: &str = "https://openrouter.ai/api/v1";
pub const MAX_ATTEMPTS_LIMIT: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    Reasoning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Minimal,
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryOn {
    /// Timeouts and other transport failures.
    Timeout,
    Http429,
    Http5xx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub retry_on: BTreeSet<RetryOn>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff_ms: 2_000,
            backoff_multiplier: 2.0,
            retry_on: [RetryOn::Timeout, RetryOn::Http429, RetryOn::Http5xx].into(),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, for `attempt >= 1`:
    /// `base * multiplier^(attempt - 1)`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.base_backoff_ms as f64 * factor / 1000.0)
    }

    fn validate(&self) -> Result<(), String> {
        if !(1..=MAX_ATTEMPTS_LIMIT).contains(&self.max_attempts) {
            return Err(format!(
                "retry.max_attempts must be in 1..={MAX_ATTEMPTS_LIMIT}, got {}",
                self.max_attempts
            ));
        }
        if self.backoff_multiplier.is_nan() || self.backoff_multiplier < 1.0 {
            return Err(format!(
                "retry.backoff_multiplier must be >= 1, got {}",
                self.backoff_multiplier
            ));
        }
        Ok(())
    }
}

fn default_max_output_tokens() -> u32 {
    16_384
}

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    900
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub label: String,
    pub endpoint_url: String,
    pub model_slug: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    /// Hybrid models with a thinking switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_enabled: Option<bool>,
    /// Omitted from requests when unset, so the provider default applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Display name for report tables, e.g. "MoE Reasoning".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<String>,
}

impl ModelConfig {
    pub fn new(label: &str, endpoint_url: &str, model_slug: &str, mode: Mode) -> Self {
        Self {
            label: label.into(),
            endpoint_url: endpoint_url.into(),
            model_slug: model_slug.into(),
            mode,
            reasoning_effort: None,
            thinking_enabled: None,
            temperature: None,
            max_output_tokens: default_max_output_tokens(),
            max_in_flight: default_max_in_flight(),
            retry: RetryPolicy::default(),
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
            architecture: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(format!("{}: {m}", self.label)));
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be >= 1".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be > 0".into());
        }
        if self.reasoning_effort.is_some() && self.mode != Mode::Reasoning {
            return bad("reasoning_effort requires mode = reasoning".into());
        }
        if let Some(t) = self.temperature {
            if t.is_nan() || t < 0.0 {
                return bad(format!("temperature must be >= 0, got {t}"));
            }
        }
        if let Err(m) = self.retry.validate() {
            return bad(m);
        }
        Ok(())
    }

    pub fn api_key_env(&self) -> &str {
        self.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.endpoint_url.trim_end_matches('/'))
    }
}

/// The ten evaluated configurations, addressed through an OpenRouter-style
/// endpoint.
pub fn roster(endpoint_url: &str) -> Vec<ModelConfig> {
    let mk = |label: &str, slug: &str, mode, effort, thinking, arch: &str| ModelConfig {
        reasoning_effort: effort,
        thinking_enabled: thinking,
        architecture: Some(arch.into()),
        ..ModelConfig::new(label, endpoint_url, slug, mode)
    };
    use Mode::*;
    use ReasoningEffort::*;
    vec![
        mk("gpt5-reasoning-high", "openai/gpt-5", Reasoning, Some(High), None, "Reasoning (high)"),
        // GPT-5 cannot switch reasoning off; "standard" is minimal effort.
        mk("gpt5-standard-minimal", "openai/gpt-5", Reasoning, Some(Minimal), None, "Standard (minimal)"),
        mk("gpt-oss-120b", "openai/gpt-oss-120b", Reasoning, None, None, "MoE Reasoning"),
        mk("gpt-oss-20b", "openai/gpt-oss-20b", Reasoning, None, None, "MoE Reasoning"),
        mk("deepseek-r1", "deepseek/deepseek-r1", Reasoning, None, None, "MoE Reasoning"),
        mk("deepseek-v3", "deepseek/deepseek-chat", Standard, None, None, "MoE Standard"),
        mk("qwen3-235b-reasoning", "qwen/qwen3-235b-a22b", Reasoning, Some(High), Some(true), "MoE Reasoning (high)"),
        mk("qwen3-235b-standard", "qwen/qwen3-235b-a22b", Standard, None, Some(false), "MoE Standard"),
        mk("llama4-maverick", "meta-llama/llama-4-maverick", Standard, None, None, "MoE Standard"),
        mk("llama4-scout", "meta-llama/llama-4-scout", Standard, None, None, "MoE Standard"),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: String,
    pub usage: Usage,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub attempt_count: u32,
    pub raw_request: Value,
    pub raw_response: Value,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("authentication failed (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("no API key: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("retries exhausted after {attempts} attempts; last error: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("response has no assistant content")]
    MissingContent,
    #[error("prompt exceeds the model's context length: {0}")]
    ContextLength(String),
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

impl GatewayError {
    /// Stable machine-readable identifier.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Auth { .. } => "auth_failure",
            GatewayError::MissingCredential(_) => "missing_credential",
            GatewayError::ExhaustedRetries { .. } => "exhausted_retries",
            GatewayError::MissingContent => "missing_content",
            GatewayError::ContextLength(_) => "context_length",
            GatewayError::ModelUnavailable(_) => "model_unavailable",
            GatewayError::Http { .. } => "http_error",
            GatewayError::Transport(_) => "transport",
            GatewayError::Malformed(_) => "malformed_response",
            GatewayError::InvalidConfig(_) => "invalid_config",
        }
    }
}

/// Request body for `/chat/completions`.
///
/// `reasoning.effort` is sent only when an effort is configured (which
/// requires `mode = reasoning`); `reasoning.enabled` carries the thinking
/// switch of hybrid models.
pub fn build_request_body(config: &ModelConfig, messages: &MessageSequence) -> Value {
    let msgs: Vec<Value> = messages
        .messages
        .iter()
        .map(|m| json!({ "role": m.role, "content": m.content }))
        .collect();
    let mut body = json!({
        "model": config.model_slug,
        "messages": msgs,
        "max_tokens": config.max_output_tokens,
    });
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    let mut reasoning = serde_json::Map::new();
    if config.mode == Mode::Reasoning {
        if let Some(e) = config.reasoning_effort {
            reasoning.insert("effort".into(), json!(e));
        }
    }
    if let Some(on) = config.thinking_enabled {
        reasoning.insert("enabled".into(), json!(on));
    }
    if !reasoning.is_empty() {
        body["reasoning"] = Value::Object(reasoning);
    }
    body
}

#[derive(Debug, Clone)]
pub enum Credentials {
    /// Read the bearer token from the config's environment variable.
    Env,
    Static(String),
}

/// Anything that can answer a chat request; the runner is generic over it.
pub trait ChatBackend {
    fn complete(
        &self,
        config: &ModelConfig,
        messages: &MessageSequence,
    ) -> impl Future<Output = Result<CompletionResponse, GatewayError>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub label: String,
    pub model_slug: String,
    #[serde(with = "millis")]
    pub latency: Duration,
}

enum Attempt {
    Done(CompletionResponse),
    Retry(RetryOn, GatewayError),
    Fail(GatewayError),
}

pub struct Gateway {
    client: reqwest::Client,
    credentials: Credentials,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
    in_flight: AtomicUsize,
}

impl Gateway {
    pub fn new(credentials: Credentials) -> Self {
        Self {
            client: reqwest::Client::new(),
            credentials,
            limits: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
        }
    }

    /// Requests currently on the wire across all models.
    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    fn limiter(&self, config: &ModelConfig) -> Arc<Semaphore> {
        let mut map = self.limits.lock().expect("limiter map poisoned");
        map.entry(config.label.clone())
            .or_insert_with(|| Arc::new(Semaphore::new(config.max_in_flight)))
            .clone()
    }

    fn api_key(&self, config: &ModelConfig) -> Result<String, GatewayError> {
        match &self.credentials {
            Credentials::Static(k) => Ok(k.clone()),
            Credentials::Env => std::env::var(config.api_key_env())
                .map_err(|_| GatewayError::MissingCredential(config.api_key_env().to_string())),
        }
    }

    async fn attempt(&self, config: &ModelConfig, key: &str, body: &Value, attempt: u32) -> Attempt {
        let limiter = self.limiter(config);
        let _permit = limiter.acquire().await.expect("semaphore never closed");
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let sent = self
            .client
            .post(config.completions_url())
            .bearer_auth(key)
            .timeout(Duration::from_secs(config.timeout_secs))
            .json(body)
            .send()
            .await;
        let result = match sent {
            Ok(resp) => {
                let status = resp.status().as_u16();
                match resp.text().await {
                    Ok(text) => classify(status, &text, body, started.elapsed(), attempt),
                    Err(e) => Attempt::Retry(RetryOn::Timeout, GatewayError::Transport(e.to_string())),
                }
            }
            Err(e) => Attempt::Retry(RetryOn::Timeout, GatewayError::Transport(e.to_string())),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    pub async fn complete(
        &self,
        config: &ModelConfig,
        messages: &MessageSequence,
    ) -> Result<CompletionResponse, GatewayError> {
        config.validate()?;
        let key = self.api_key(config)?;
        let body = build_request_body(config, messages);
        let policy = &config.retry;
        let mut attempt = 1;
        loop {
            match self.attempt(config, &key, &body, attempt).await {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(class, e) => {
                    if !policy.retry_on.contains(&class) {
                        return Err(e);
                    }
                    if attempt >= policy.max_attempts {
                        return Err(GatewayError::ExhaustedRetries {
                            attempts: attempt,
                            last: e.to_string(),
                        });
                    }
                    tracing::debug!(label = %config.label, attempt, error = %e, "retrying");
                    tokio::time::sleep(policy.delay(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    /// One minimal request, no retries. `Ok` means reachable, authorized and
    /// serving the model.
    pub async fn probe(&self, config: &ModelConfig) -> Result<HealthReport, GatewayError> {
        config.validate()?;
        let key = self.api_key(config)?;
        let probe_cfg = ModelConfig {
            max_output_tokens: 16,
            ..config.clone()
        };
        let msgs = MessageSequence {
            messages: vec![Message {
                role: Role::User,
                content: "Reply with the word OK.".into(),
            }],
        };
        let body = build_request_body(&probe_cfg, &msgs);
        match self.attempt(config, &key, &body, 1).await {
            Attempt::Done(r) => Ok(HealthReport {
                label: config.label.clone(),
                model_slug: config.model_slug.clone(),
                latency: r.latency,
            }),
            // a probe that got an answer without content still proves reachability
            Attempt::Fail(GatewayError::MissingContent) => Ok(HealthReport {
                label: config.label.clone(),
                model_slug: config.model_slug.clone(),
                latency: Duration::ZERO,
            }),
            Attempt::Fail(e) | Attempt::Retry(_, e) => Err(e),
        }
    }
}

impl ChatBackend for Gateway {
    async fn complete(
        &self,
        config: &ModelConfig,
        messages: &MessageSequence,
    ) -> Result<CompletionResponse, GatewayError> {
        Gateway::complete(self, config, messages).await
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.chars().take(500).collect())
}

fn looks_like_context_length(msg: &str) -> bool {
    let m = msg.to_lowercase();
    m.contains("context_length_exceeded")
        || (m.contains("context") && (m.contains("length") || m.contains("window") || m.contains("too long")))
        || m.contains("maximum context")
}

fn looks_like_unknown_model(msg: &str) -> bool {
    let m = msg.to_lowercase();
    m.contains("model")
        && ["not found", "not a valid", "does not exist", "unavailable", "no endpoints", "unknown"]
            .iter()
            .any(|p| m.contains(p))
}

fn classify_status(status: u16, message: String) -> Attempt {
    match status {
        401 | 403 => Attempt::Fail(GatewayError::Auth { status, message }),
        404 => Attempt::Fail(GatewayError::ModelUnavailable(message)),
        408 => Attempt::Retry(RetryOn::Timeout, GatewayError::Http { status, message }),
        429 => Attempt::Retry(RetryOn::Http429, GatewayError::Http { status, message }),
        500..=599 => Attempt::Retry(RetryOn::Http5xx, GatewayError::Http { status, message }),
        _ if looks_like_context_length(&message) => {
            Attempt::Fail(GatewayError::ContextLength(message))
        }
        _ if looks_like_unknown_model(&message) => {
            Attempt::Fail(GatewayError::ModelUnavailable(message))
        }
        _ => Attempt::Fail(GatewayError::Http { status, message }),
    }
}

fn classify(status: u16, text: &str, request: &Value, latency: Duration, attempt: u32) -> Attempt {
    if !(200..300).contains(&status) {
        return classify_status(status, error_message(text));
    }
    let v: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Attempt::Fail(GatewayError::Malformed(e.to_string())),
    };
    // Some routers report upstream failures inside a 200 body.
    if let Some(err) = v.get("error") {
        let code = err.get("code").and_then(Value::as_u64).unwrap_or(502) as u16;
        let message = err
            .get("message")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        return classify_status(code, message);
    }
    let choice = v.pointer("/choices/0");
    let content = choice
        .and_then(|c| c.pointer("/message/content"))
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty());
    let Some(content) = content else {
        return Attempt::Fail(GatewayError::MissingContent);
    };
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Attempt::Done(CompletionResponse {
        text: content.to_string(),
        finish_reason: choice
            .and_then(|c| c.get("finish_reason"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        usage,
        latency,
        attempt_count: attempt,
        raw_request: request.clone(),
        raw_response: v,
    })
}
