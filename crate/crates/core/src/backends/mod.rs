//! Pluggable text backends and the cached, retrying [`Decider`] every
//! pipeline call goes through.

mod cache;
mod http;
mod oracle;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{compact, CacheEntry, CompactReport, ResponseCache};
pub use http::{HttpBackend, HttpConfig};
pub use oracle::{ideology_for_score, oracle_decide, sigmoid, OracleBackend, OracleConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("no recorded response for cache key {cache_key}")]
    ReplayMiss { cache_key: String },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("cache error: {0}")]
    Cache(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            max_tokens: 256,
        }
    }
}

/// What a request is asking for; lets non-LLM backends answer in kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Vote,
    Ideology,
    Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub prompt: String,
    pub model_id: String,
    pub params: GenerationParams,
    /// Identity of the independent draw this request represents (the persona
    /// id). Two personas with identical demographics render identical
    /// prompts but must not share one cached answer.
    pub draw_key: Option<String>,
    pub stage: Stage,
    /// Persona features for the logistic oracle. Not part of the cache key;
    /// they are a function of the persona already identified by `draw_key`.
    pub features: Vec<(String, f64)>,
    /// Raw material being summarized, for summary requests.
    pub subject: Option<String>,
}

impl BackendRequest {
    pub fn new(prompt: impl Into<String>, model_id: impl Into<String>, stage: Stage) -> Self {
        BackendRequest {
            prompt: prompt.into(),
            model_id: model_id.into(),
            params: GenerationParams::default(),
            draw_key: None,
            stage,
            features: Vec::new(),
            subject: None,
        }
    }

    /// SHA-256 over the canonical JSON of (model_id, prompt, params, draw_key).
    pub fn cache_key(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            model_id: &'a str,
            prompt: &'a str,
            temperature: f64,
            max_tokens: u32,
            draw_key: Option<&'a str>,
        }
        let canonical = serde_json::to_vec(&Keyed {
            model_id: &self.model_id,
            prompt: &self.prompt,
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
            draw_key: self.draw_key.as_deref(),
        })
        .expect("plain struct serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

pub trait DecisionBackend: Send + Sync {
    fn id(&self) -> String;

    /// Deterministic backends produce identical output for identical requests
    /// on every run; their cache entries carry no timestamps.
    fn deterministic(&self) -> bool;

    fn max_parallel(&self) -> usize {
        1
    }

    fn call(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

/// Returns the summarized material (or the prompt) unchanged.
#[derive(Debug, Clone, Default)]
pub struct EchoBackend;

impl DecisionBackend for EchoBackend {
    fn id(&self) -> String {
        "echo".into()
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn max_parallel(&self) -> usize {
        usize::MAX
    }
    fn call(&self, request: &BackendRequest) -> Result<String, BackendError> {
        Ok(request.subject.clone().unwrap_or_else(|| request.prompt.clone()))
    }
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct FixedBackend(pub String);

impl DecisionBackend for FixedBackend {
    fn id(&self) -> String {
        "fixed".into()
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn max_parallel(&self) -> usize {
        usize::MAX
    }
    fn call(&self, _request: &BackendRequest) -> Result<String, BackendError> {
        Ok(self.0.clone())
    }
}

/// Backend defined by a closure; handy for scripted answers.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&BackendRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnBackend {
            name: name.into(),
            f,
        }
    }
}

impl<F> DecisionBackend for FnBackend<F>
where
    F: Fn(&BackendRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn id(&self) -> String {
        self.name.clone()
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn max_parallel(&self) -> usize {
        usize::MAX
    }
    fn call(&self, request: &BackendRequest) -> Result<String, BackendError> {
        (self.f)(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retry_max: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retry_max: 4,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub response: String,
    pub cache_key: String,
    /// Backend attempts spent on this call (the recorded count on cache hits).
    pub attempts: u32,
    pub from_cache: bool,
}

/// Cache-first access to a backend. Without an inner backend it is a pure
/// replay of recorded responses.
pub struct Decider {
    cache: Arc<ResponseCache>,
    inner: Option<Arc<dyn DecisionBackend>>,
    retry: RetryPolicy,
    strict_replay: bool,
    inner_calls: AtomicU64,
}

impl Decider {
    pub fn new(inner: Arc<dyn DecisionBackend>, cache: Arc<ResponseCache>, retry: RetryPolicy) -> Self {
        Decider {
            cache,
            inner: Some(inner),
            retry,
            strict_replay: false,
            inner_calls: AtomicU64::new(0),
        }
    }

    /// Serve only recorded responses. In strict mode a miss is fatal to the
    /// run; otherwise it fails only the request that missed.
    pub fn replay(cache: Arc<ResponseCache>, strict: bool) -> Self {
        Decider {
            cache,
            inner: None,
            retry: RetryPolicy::default(),
            strict_replay: strict,
            inner_calls: AtomicU64::new(0),
        }
    }

    pub fn backend_id(&self) -> String {
        match &self.inner {
            Some(b) => b.id(),
            None => "replay".into(),
        }
    }

    pub fn max_parallel(&self) -> usize {
        self.inner.as_ref().map_or(usize::MAX, |b| b.max_parallel())
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }

    /// Number of calls that reached the inner backend.
    pub fn inner_calls(&self) -> u64 {
        self.inner_calls.load(Ordering::Relaxed)
    }

    /// Errors that must abort a whole run rather than one persona.
    pub fn is_fatal(&self, error: &BackendError) -> bool {
        match error {
            BackendError::AuthFailure(_) | BackendError::Cache(_) | BackendError::Config(_) => true,
            BackendError::ReplayMiss { .. } => self.strict_replay,
            _ => false,
        }
    }

    pub fn decide(&self, request: &BackendRequest) -> Result<Decision, BackendError> {
        let key = request.cache_key();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(Decision {
                response: hit.response,
                cache_key: key,
                attempts: hit.attempts,
                from_cache: true,
            });
        }
        let Some(inner) = &self.inner else {
            return Err(BackendError::ReplayMiss { cache_key: key });
        };

        let mut attempts = 0;
        let response = loop {
            attempts += 1;
            self.inner_calls.fetch_add(1, Ordering::Relaxed);
            match inner.call(request) {
                Ok(text) => break text,
                Err(e) if e.retryable() && attempts <= self.retry.retry_max => {
                    let wait = match &e {
                        BackendError::RateLimited {
                            retry_after_ms: Some(ms),
                        } => Duration::from_millis(*ms),
                        _ => self.retry.backoff(attempts - 1),
                    };
                    log::debug!("retrying after {wait:?}: {e}");
                    std::thread::sleep(wait);
                }
                Err(e) if e.retryable() => {
                    return Err(BackendError::RetriesExhausted {
                        attempts,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        };
        let timestamp_ms = (!inner.deterministic()).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64)
        });
        let stored = self.cache.insert(CacheEntry {
            cache_key: key.clone(),
            backend: inner.id(),
            model_id: request.model_id.clone(),
            params: request.params,
            draw_key: request.draw_key.clone(),
            prompt: request.prompt.clone(),
            response,
            timestamp_ms,
            attempts,
        })?;
        Ok(Decision {
            response: stored.response,
            cache_key: key,
            attempts,
            from_cache: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn request(prompt: &str) -> BackendRequest {
        BackendRequest::new(prompt, "model-x", Stage::Vote)
    }

    fn quick_retry() -> RetryPolicy {
        RetryPolicy {
            retry_max: 3,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    #[test]
    fn cache_key_is_pure_and_field_sensitive() {
        let a = request("p");
        assert_eq!(a.cache_key(), request("p").cache_key());
        let mut b = request("p");
        b.params.temperature = 0.0;
        assert_ne!(a.cache_key(), b.cache_key());
        let mut c = request("p");
        c.draw_key = Some("persona-1".into());
        assert_ne!(a.cache_key(), c.cache_key());
        let mut d = request("p");
        d.features = vec![("x".into(), 1.0)];
        assert_eq!(a.cache_key(), d.cache_key());
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let decider = Decider::new(
            Arc::new(FixedBackend("Republican".into())),
            Arc::new(ResponseCache::in_memory()),
            quick_retry(),
        );
        let first = decider.decide(&request("q")).unwrap();
        let second = decider.decide(&request("q")).unwrap();
        assert!(!first.from_cache);
        assert!(second.from_cache);
        assert_eq!(first.response, second.response);
        assert_eq!(decider.inner_calls(), 1);
    }

    #[test]
    fn strict_replay_miss() {
        let decider = Decider::replay(Arc::new(ResponseCache::in_memory()), true);
        let err = decider.decide(&request("unseen")).unwrap_err();
        assert!(matches!(err, BackendError::ReplayMiss { .. }));
        assert!(decider.is_fatal(&err));
        let lenient = Decider::replay(Arc::new(ResponseCache::in_memory()), false);
        assert!(!lenient.is_fatal(&err));
    }

    #[test]
    fn transient_error_then_success() {
        let failures = Mutex::new(1);
        let backend = FnBackend::new("flaky", move |_r: &BackendRequest| {
            let mut left = failures.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                Err(BackendError::Transport("connection reset".into()))
            } else {
                Ok("Democratic".into())
            }
        });
        let decider = Decider::new(Arc::new(backend), Arc::new(ResponseCache::in_memory()), quick_retry());
        let d = decider.decide(&request("q")).unwrap();
        assert_eq!(d.response, "Democratic");
        assert_eq!(d.attempts, 2);
    }

    #[test]
    fn retries_are_bounded() {
        let backend = FnBackend::new("down", |_r: &BackendRequest| {
            Err(BackendError::Transport("refused".into()))
        });
        let decider = Decider::new(Arc::new(backend), Arc::new(ResponseCache::in_memory()), quick_retry());
        match decider.decide(&request("q")) {
            Err(BackendError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(decider.inner_calls(), 4);
        assert!(decider.cache().is_empty());
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let backend = FnBackend::new("denied", |_r: &BackendRequest| {
            Err(BackendError::AuthFailure("401".into()))
        });
        let decider = Decider::new(Arc::new(backend), Arc::new(ResponseCache::in_memory()), quick_retry());
        let err = decider.decide(&request("q")).unwrap_err();
        assert!(decider.is_fatal(&err));
        assert_eq!(decider.inner_calls(), 1);
    }

    #[test]
    fn rate_limit_honours_advised_delay() {
        let calls = Mutex::new(0);
        let backend = FnBackend::new("limited", move |_r: &BackendRequest| {
            let mut n = calls.lock().unwrap();
            *n += 1;
            if *n == 1 {
                Err(BackendError::RateLimited { retry_after_ms: Some(20) })
            } else {
                Ok("No Preference".into())
            }
        });
        let decider = Decider::new(Arc::new(backend), Arc::new(ResponseCache::in_memory()), quick_retry());
        let start = std::time::Instant::now();
        let d = decider.decide(&request("q")).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(20));
        assert_eq!(d.attempts, 2);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            retry_max: 5,
            base_delay_ms: 100,
            max_delay_ms: 350,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
    }
}
