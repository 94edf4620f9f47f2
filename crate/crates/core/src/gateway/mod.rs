//! Single entry point for every generative-model call.
//!
//! [`Gateway::complete`] consults the persistent [`CallCache`] first, then the
//! configured [`ChatBackend`] with exponential-backoff retries on transient
//! failures, and records usage in the [`CostLedger`].

mod cache;
mod http;
mod ledger;
mod mock;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheError, CachedReply, CallCache};
pub use http::{OpenAiBackend, DEFAULT_API_BASE, ENV_API_BASE, ENV_API_KEY, ENV_API_KEY_FALLBACK};
pub use ledger::{
    CostLedger, CostReport, ModelCost, ModelUsage, Pricing, Rate, DEFAULT_CHEAP_MODEL, DEFAULT_STRONG_MODEL,
};
pub use mock::{GradeEntry, GradeRule, MockBackend, MockCounters, MockRules, RewriteRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
}

impl ChatRequest {
    /// Temperature 0, no output cap.
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: None,
        }
    }

    pub fn with_max_output_tokens(mut self, limit: u32) -> Self {
        self.max_output_tokens = Some(limit);
        self
    }

    /// Hex SHA-256 over the canonical JSON of every field.
    pub fn cache_key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Human-readable rendering, one `### role` header per message.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str("### ");
            out.push_str(m.role.as_str());
            out.push('\n');
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached: bool,
    pub request_hash: String,
}

/// Which pipeline step issued a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Relevance,
    Rewrite,
    RerankCheap,
    RerankStrong,
}

/// Trace entry for one completed call. Whether it was served from the
/// cache is deliberately left out so traces are identical across reruns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub model: String,
    pub request_hash: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl CallRecord {
    pub fn new(stage: Stage, model: &str, response: &ChatResponse) -> Self {
        Self {
            stage,
            model: model.to_owned(),
            request_hash: response.request_hash.clone(),
            input_tokens: response.input_tokens,
            output_tokens: response.output_tokens,
        }
    }
}

/// What a backend hands back for one successful call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unhandled prompt: {0}")]
    Unhandled(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

impl BackendError {
    /// Transport failures, 429 and 5xx are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Unhandled(_) | BackendError::Malformed(_) => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, BackendError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<BackendReply, BackendError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        self(request)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request has no messages")]
    EmptyRequest,
    #[error("backend unavailable after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: BackendError },
    #[error("backend rejected request: {0}")]
    Permanent(BackendError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl GatewayError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, GatewayError::Exhausted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts and no jitter.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            factor: 2.0,
            jitter: false,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let scale = self.factor.powi(retry.saturating_sub(1) as i32);
        let mut secs = self.base_delay.as_secs_f64() * scale;
        if self.jitter && secs > 0.0 {
            // ±25%, seeded from the clock
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.subsec_nanos())
                .unwrap_or(0);
            let unit = f64::from(nanos % 1000) / 999.0;
            secs *= 0.75 + 0.5 * unit;
        }
        Duration::from_secs_f64(secs)
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    cache: CallCache,
    ledger: CostLedger,
    retry: RetryPolicy,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, cache: CallCache, retry: RetryPolicy) -> Self {
        Self {
            backend,
            cache,
            ledger: CostLedger::new(),
            retry,
            inflight: Mutex::new(HashMap::new()),
        }
    }

    /// In-memory cache, immediate retries. Convenient for tests.
    pub fn ephemeral(backend: Arc<dyn ChatBackend>) -> Self {
        Self::new(backend, CallCache::in_memory(), RetryPolicy::immediate(5))
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn cache(&self) -> &CallCache {
        &self.cache
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyRequest);
        }
        let key = request.cache_key();
        if let Some(hit) = self.cache_hit(&request.model, &key) {
            return Ok(hit);
        }

        // one backend call per key even under concurrent callers
        let slot = {
            let mut map = self.inflight.lock().unwrap();
            map.entry(key.clone()).or_default().clone()
        };
        let _guard = slot.lock().unwrap();
        if let Some(hit) = self.cache_hit(&request.model, &key) {
            return Ok(hit);
        }

        let result = self.call_with_retries(request);
        let outcome = match result {
            Ok((reply, retries)) => {
                self.cache.put(&key, CachedReply::from(&reply))?;
                self.ledger
                    .record_call(&request.model, reply.input_tokens, reply.output_tokens, retries);
                Ok(ChatResponse {
                    content: reply.content,
                    input_tokens: reply.input_tokens,
                    output_tokens: reply.output_tokens,
                    cached: false,
                    request_hash: key.clone(),
                })
            }
            Err((err, retries)) => {
                self.ledger.record_failure(&request.model, retries);
                Err(err)
            }
        };
        self.inflight.lock().unwrap().remove(&key);
        outcome
    }

    fn cache_hit(&self, model: &str, key: &str) -> Option<ChatResponse> {
        let hit = self.cache.get(key)?;
        self.ledger.record_cached(model);
        Some(ChatResponse {
            content: hit.content,
            input_tokens: hit.input_tokens,
            output_tokens: hit.output_tokens,
            cached: true,
            request_hash: key.to_owned(),
        })
    }

    fn call_with_retries(&self, request: &ChatRequest) -> Result<(BackendReply, u32), (GatewayError, u32)> {
        let mut retries = 0;
        loop {
            match self.backend.chat(request) {
                Ok(reply) => return Ok((reply, retries)),
                Err(err) if err.is_transient() => {
                    if retries >= self.retry.max_retries {
                        return Err((
                            GatewayError::Exhausted {
                                attempts: retries + 1,
                                last: err,
                            },
                            retries,
                        ));
                    }
                    retries += 1;
                    log::warn!("model {}: {err}; retry {retries}", request.model);
                    let delay = self.retry.delay(retries);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(err) => return Err((GatewayError::Permanent(err), retries)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(
            "gpt-4",
            vec![
                ChatMessage::new(Role::System, "sys"),
                ChatMessage::new(Role::User, text),
            ],
        )
    }

    struct Flaky {
        failures: u32,
        status: u16,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn chat(&self, _: &ChatRequest) -> Result<BackendReply, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::Status {
                    status: self.status,
                    body: "boom".into(),
                })
            } else {
                Ok(BackendReply {
                    content: "ok".into(),
                    input_tokens: 10,
                    output_tokens: 1,
                })
            }
        }
    }

    #[test]
    fn second_identical_request_is_cached() {
        let backend = Arc::new(Flaky {
            failures: 0,
            status: 500,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::ephemeral(backend.clone());
        let first = gw.complete(&request("hi")).unwrap();
        let second = gw.complete(&request("hi")).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(second.input_tokens, 10);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        let usage = gw.ledger().snapshot();
        assert_eq!(usage["gpt-4"].calls, 1);
        assert_eq!(usage["gpt-4"].cached_hits, 1);
        assert_eq!(usage["gpt-4"].input_tokens, 10);
    }

    #[test]
    fn retries_transient_errors() {
        let backend = Arc::new(Flaky {
            failures: 2,
            status: 500,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::ephemeral(backend.clone());
        let resp = gw.complete(&request("x")).unwrap();
        assert_eq!(resp.content, "ok");
        assert_eq!(gw.ledger().snapshot()["gpt-4"].retries, 2);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausts_after_max_retries() {
        let backend = Arc::new(Flaky {
            failures: 100,
            status: 429,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::ephemeral(backend.clone());
        let err = gw.complete(&request("x")).unwrap_err();
        assert!(err.is_exhaustion());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 6);
    }

    #[test]
    fn client_errors_are_permanent() {
        let backend = Arc::new(Flaky {
            failures: 100,
            status: 400,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::ephemeral(backend.clone());
        match gw.complete(&request("x")) {
            Err(GatewayError::Permanent(BackendError::Status { status, body })) => {
                assert_eq!(status, 400);
                assert_eq!(body, "boom");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_key_covers_sampling_settings() {
        let a = request("x");
        let mut b = a.clone();
        b.temperature = 0.5;
        let c = a.clone().with_max_output_tokens(20);
        assert_ne!(a.cache_key(), b.cache_key());
        assert_ne!(a.cache_key(), c.cache_key());
        assert_eq!(a.cache_key(), request("x").cache_key());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(1), Duration::from_secs(1));
        assert_eq!(p.delay(3), Duration::from_secs(4));
    }

    #[test]
    fn empty_request_rejected() {
        let gw = Gateway::ephemeral(Arc::new(Flaky {
            failures: 0,
            status: 500,
            calls: AtomicU32::new(0),
        }));
        assert!(matches!(
            gw.complete(&ChatRequest::new("m", vec![])),
            Err(GatewayError::EmptyRequest)
        ));
    }
}
