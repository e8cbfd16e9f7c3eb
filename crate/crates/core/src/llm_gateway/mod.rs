//! Chat-completion gateway: one request/response model over an
//! OpenAI-compatible HTTP backend or a scripted mock, with a persistent
//! content-addressed response cache, bounded retries and an in-flight limit.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use mock::{MockBackend, MockRule, MockScript};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("mock backend has no rule for the request and no default")]
    Unmatched,
    #[error("response cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Single user-message request at temperature 0.
    pub fn user(model: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user message".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Cache key: SHA-256 over model, messages and temperature.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            model: &'a str,
            messages: &'a [ChatMessage],
            temperature: f64,
        }
        let key = Key {
            model: &self.model,
            messages: &self.messages,
            temperature: self.temperature,
        };
        let bytes = serde_json::to_vec(&key).expect("request key serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Model name and sampling settings shared by every prompt of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model: String,
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl ModelSettings {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn request(&self, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            ..ChatRequest::user(self.model.clone(), prompt)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model: String,
    #[serde(default)]
    pub usage: Usage,
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Connection, timeout or decoding failure; always retried.
    Transport(String),
    /// Non-success HTTP status; 429 and 5xx are retried.
    Status { status: u16, body: String },
    Unmatched,
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => retryable_status(*status),
            BackendError::Unmatched => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base·2^(retry−1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.released.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.released.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    in_flight: InFlight,
    backend_calls: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            in_flight: InFlight {
                limit: DEFAULT_MAX_IN_FLIGHT,
                active: Mutex::new(0),
                released: Condvar::new(),
            },
            backend_calls: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight.limit = limit.max(1);
        self
    }

    /// Number of backend attempts made so far, cache hits excluded.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously outstanding backend requests seen.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.complete_attempt(request, 0)
    }

    /// Completes `request` and applies `parse`, asking once more when the
    /// first response does not parse. Returns the last response with its
    /// parse result.
    pub fn complete_parsed<T, E>(
        &self,
        request: &ChatRequest,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> Result<(Result<T, E>, ChatResponse), GatewayError> {
        let first = self.complete_attempt(request, 0)?;
        if let Ok(v) = parse(&first.text) {
            return Ok((Ok(v), first));
        }
        let second = self.complete_attempt(request, 1)?;
        Ok((parse(&second.text), second))
    }

    /// Like [`Gateway::complete`], but attempt `n > 0` is cached under its own
    /// key so a reparse retry reaches the backend once and replays on reruns.
    pub fn complete_attempt(&self, request: &ChatRequest, n: u32) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let mut digest = request.digest();
        if n > 0 {
            digest.push_str(&format!("#{n}"));
        }
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&digest)) {
            return Ok(hit);
        }
        self.fetch(request, digest)
    }

    fn fetch(&self, request: &ChatRequest, digest: String) -> Result<ChatResponse, GatewayError> {
        let response = self.send_with_retry(request)?;
        if let Some(cache) = &self.cache {
            cache.put(digest, response.clone())?;
        }
        Ok(response)
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.in_flight.acquire();
                let now = *self.in_flight.active.lock().unwrap_or_else(|e| e.into_inner());
                self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                self.backend.send(request)
            };
            let err = match result {
                Ok(response) => return Ok(response),
                Err(err) => err,
            };
            if !err.retryable() || attempt >= attempts {
                return Err(match err {
                    BackendError::Unmatched => GatewayError::Unmatched,
                    BackendError::Status { status, body } if !retryable_status(status) => {
                        GatewayError::Rejected { status, body }
                    }
                    BackendError::Status { status, body } => GatewayError::Transport {
                        attempts: attempt,
                        message: format!("HTTP {status}: {body}"),
                    },
                    BackendError::Transport(message) => GatewayError::Transport {
                        attempts: attempt,
                        message,
                    },
                });
            }
            let delay = self.retry.delay(attempt);
            log::warn!("backend attempt {attempt} failed ({err:?}); retrying in {delay:?}");
            std::thread::sleep(delay);
        }
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || status >= 500
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Flaky {
        failures: Mutex<Vec<BackendError>>,
        calls: Arc<AtomicUsize>,
    }

    impl Backend for Flaky {
        fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut f = self.failures.lock().unwrap();
            if f.is_empty() {
                Ok(ChatResponse {
                    text: "ok".into(),
                    model: request.model.clone(),
                    usage: Usage::default(),
                })
            } else {
                Err(f.remove(0))
            }
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    fn flaky(failures: Vec<BackendError>) -> (Gateway, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let gw = Gateway::new(Box::new(Flaky {
            failures: Mutex::new(failures),
            calls: calls.clone(),
        }))
        .with_retry(fast());
        (gw, calls)
    }

    #[test]
    fn retries_transport_then_succeeds() {
        let (gw, calls) = flaky(vec![
            BackendError::Status { status: 503, body: String::new() },
            BackendError::Transport("reset".into()),
        ]);
        assert_eq!(gw.complete(&ChatRequest::user("m", "hi")).unwrap().text, "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausts_attempts() {
        let (gw, calls) = flaky(vec![BackendError::Transport("x".into()); 5]);
        let err = gw.complete(&ChatRequest::user("m", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_error_not_retried() {
        let (gw, calls) = flaky(vec![BackendError::Status { status: 400, body: "bad".into() }]);
        let err = gw.complete(&ChatRequest::user("m", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::Rejected { status: 400, ref body } if body == "bad"));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn request_validation() {
        let (gw, _) = flaky(vec![]);
        let mut req = ChatRequest::user("m", "hi");
        req.temperature = -1.0;
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
        req.temperature = 0.0;
        req.messages[0].role = Role::System;
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn digest_depends_on_content() {
        let a = ChatRequest::user("m", "hi");
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.temperature = 0.5;
        assert_ne!(a.digest(), b.digest());
        let c = ChatRequest::user("other", "hi");
        assert_ne!(a.digest(), c.digest());
        // max_tokens is not part of the key
        let mut d = a.clone();
        d.max_tokens = Some(9);
        assert_eq!(a.digest(), d.digest());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
        assert_eq!(p.delay(40), Duration::from_millis(350));
    }

    struct Slow(AtomicUsize);

    impl Backend for Slow {
        fn send(&self, r: &ChatRequest) -> Result<ChatResponse, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            Ok(ChatResponse { text: r.last_user_message().into(), model: r.model.clone(), usage: Usage::default() })
        }
    }

    #[test]
    fn in_flight_bound_holds() {
        let gw = Gateway::new(Box::new(Slow(AtomicUsize::new(0)))).with_max_in_flight(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&ChatRequest::user("m", format!("q{i}"))).unwrap());
            }
        });
        assert_eq!(gw.backend_calls(), 8);
        assert!(gw.peak_in_flight() <= 2);
    }
}
