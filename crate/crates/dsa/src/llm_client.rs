//! Chat-completion client abstraction with exact sampling controls and a
//! content-addressed record/replay cache.
//!
//! Three backends implement [`GenerationClient`]:
//!
//! - [`LiveClient`] performs OpenAI-style chat-completion HTTP calls and
//!   records every response into the replay cache.
//! - [`ReplayClient`] serves responses from the cache and fails on a miss,
//!   making every downstream pipeline a pure function of (inputs, cache,
//!   seeds).
//! - [`StubClient`] produces scripted responses for tests and demos.
//!
//! Cache entries are keyed by [`canonical_request_hash`]: the SHA-256 of the
//! request's canonical JSON form (sorted keys, no insignificant whitespace,
//! shortest round-trip float rendering).

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::{approx_token_count, write_atomic};

/// Temperature / nucleus-sampling pair for one generation task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

/// Defaults for textbook generation.
pub const TEXTBOOK_SAMPLING: SamplingParams = SamplingParams { temperature: 0.5, top_p: 0.95 };
/// Defaults for exercise problem and answer generation. Lower temperature
/// keeps problems and answers accurate.
pub const EXERCISE_SAMPLING: SamplingParams = SamplingParams { temperature: 0.1, top_p: 0.95 };
/// Defaults for dynamic-update augmentation. Higher temperature improves
/// diversity of the newly generated problems.
pub const AUGMENT_SAMPLING: SamplingParams = SamplingParams { temperature: 1.0, top_p: 0.95 };

/// Default number of independent solution samples for self-consistency voting.
pub const DEFAULT_SELF_CONSISTENCY_K: u32 = 3;

/// Default completion budget. Not pinned by any reference configuration;
/// override per call when a task needs more room.
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

/// Environment variable naming the chat-completions endpoint base URL.
pub const ENV_API_BASE: &str = "DSA_API_BASE";
/// Environment variable holding the API key for the live backend.
pub const ENV_API_KEY: &str = "DSA_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay cache miss for request {hash}")]
    CacheMiss { hash: String },
    #[error("http status {status} for request {hash}: {body}")]
    Http { status: u16, hash: String, body: String },
    #[error("network failure for request {hash}: {message}")]
    Network { hash: String, message: String },
    #[error("malformed api response for request {hash}: {message}")]
    MalformedResponse { hash: String, message: String },
    #[error("backend returned {got} samples, request asked for {expected} (request {hash})")]
    SampleCountMismatch { expected: u32, got: usize, hash: String },
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("cache io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache entry decode error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stub has no response scripted for request {hash}")]
    StubExhausted { hash: String },
}

/// A single text-generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, params: SamplingParams) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: DEFAULT_MAX_TOKENS,
            n_samples: 1,
        }
    }

    pub fn with_n_samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.prompt.is_empty() {
            return Err(ClientError::InvalidRequest("prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) || !self.temperature.is_finite() {
            return Err(ClientError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ClientError::InvalidRequest(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(ClientError::InvalidRequest("n_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Stub,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Live => write!(f, "live"),
            BackendKind::Replay => write!(f, "replay"),
            BackendKind::Stub => write!(f, "stub"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub samples: Vec<String>,
    pub usage: TokenUsage,
    pub backend: BackendKind,
}

/// Uniform interface to a chat-completion text generator.
///
/// Implementations must be safe for concurrent use; the pipeline issues
/// bounded-parallel requests against a shared client.
pub trait GenerationClient: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError>;
}

impl<T: GenerationClient + ?Sized> GenerationClient for &T {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        (**self).generate(req)
    }
}

/// Canonical JSON form of a request: object keys sorted, compact separators,
/// floats in shortest round-trip form.
fn canonical_json(req: &GenerationRequest) -> String {
    // serde_json's Value object is a BTreeMap, so key order is sorted; its
    // float formatting (ryu) is shortest round-trip and platform-stable.
    let value = serde_json::to_value(req).expect("request serializes");
    serde_json::to_string(&value).expect("value serializes")
}

/// SHA-256 of the canonical request serialization, as 64 lowercase hex chars.
pub fn canonical_request_hash(req: &GenerationRequest) -> String {
    hex::encode(Sha256::digest(canonical_json(req).as_bytes()))
}

/// One recorded exchange, stored as `<hash>.json` in the cache directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: GenerationRequest,
    pub samples: Vec<String>,
    pub usage: TokenUsage,
}

/// Directory-backed response cache, one JSON file per request hash.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn load(&self, hash: &str) -> Result<Option<CacheEntry>, ClientError> {
        let path = self.entry_path(hash);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path)?;
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    /// Atomic write: temp file then rename, so concurrent writers never
    /// expose a partial entry.
    pub fn store(&self, hash: &str, entry: &CacheEntry) -> Result<(), ClientError> {
        let mut bytes = serde_json::to_vec_pretty(entry)?;
        bytes.push(b'\n');
        write_atomic(&self.entry_path(hash), &bytes)?;
        Ok(())
    }
}

/// Serves cached responses; errors with the canonical hash on a miss.
pub struct ReplayClient {
    cache: ReplayCache,
}

impl ReplayClient {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        ReplayClient { cache: ReplayCache::new(cache_dir) }
    }
}

impl GenerationClient for ReplayClient {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        req.validate()?;
        let hash = canonical_request_hash(req);
        let entry = self
            .cache
            .load(&hash)?
            .ok_or_else(|| ClientError::CacheMiss { hash: hash.clone() })?;
        if entry.samples.len() != req.n_samples as usize {
            return Err(ClientError::SampleCountMismatch {
                expected: req.n_samples,
                got: entry.samples.len(),
                hash,
            });
        }
        Ok(GenerationResponse {
            samples: entry.samples,
            usage: entry.usage,
            backend: BackendKind::Replay,
        })
    }
}

type StubFn = dyn Fn(&GenerationRequest) -> Result<Vec<String>, ClientError> + Send + Sync;

/// Scripted backend for tests and offline demos.
pub struct StubClient {
    respond: Box<StubFn>,
}

impl StubClient {
    /// Build a stub from a response function. The function returns the full
    /// sample list for a request; its length must equal `n_samples`.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&GenerationRequest) -> Result<Vec<String>, ClientError> + Send + Sync + 'static,
    {
        StubClient { respond: Box::new(f) }
    }

    /// A stub that answers every request with `sample`, replicated to the
    /// requested sample count.
    pub fn fixed(sample: impl Into<String>) -> Self {
        let sample = sample.into();
        StubClient::from_fn(move |req| Ok(vec![sample.clone(); req.n_samples as usize]))
    }

    /// A stub that pops scripted sample-lists in order, one per call.
    pub fn scripted(responses: Vec<Vec<String>>) -> Self {
        let queue = Mutex::new(std::collections::VecDeque::from(responses));
        StubClient::from_fn(move |req| {
            queue.lock().unwrap().pop_front().ok_or_else(|| ClientError::StubExhausted {
                hash: canonical_request_hash(req),
            })
        })
    }
}

impl GenerationClient for StubClient {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        req.validate()?;
        let samples = (self.respond)(req)?;
        if samples.len() != req.n_samples as usize {
            return Err(ClientError::SampleCountMismatch {
                expected: req.n_samples,
                got: samples.len(),
                hash: canonical_request_hash(req),
            });
        }
        let usage = TokenUsage {
            prompt_tokens: approx_token_count(&req.prompt),
            completion_tokens: samples.iter().map(|s| approx_token_count(s)).sum(),
        };
        Ok(GenerationResponse { samples, usage, backend: BackendKind::Stub })
    }
}

/// Wraps any client and records its responses into a replay cache, so a stub
/// or live run can seed deterministic replay fixtures.
pub struct RecordingClient<C> {
    inner: C,
    cache: ReplayCache,
}

impl<C: GenerationClient> RecordingClient<C> {
    pub fn new(inner: C, cache_dir: impl Into<PathBuf>) -> Self {
        RecordingClient { inner, cache: ReplayCache::new(cache_dir) }
    }
}

impl<C: GenerationClient> GenerationClient for RecordingClient<C> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let resp = self.inner.generate(req)?;
        let hash = canonical_request_hash(req);
        self.cache.store(
            &hash,
            &CacheEntry {
                request: req.clone(),
                samples: resp.samples.clone(),
                usage: resp.usage,
            },
        )?;
        Ok(resp)
    }
}

/// OpenAI-style chat-completions backend. Every successful response is
/// written into the replay cache before it is returned.
pub struct LiveClient {
    base_url: String,
    api_key: String,
    model: String,
    cache: ReplayCache,
    http: reqwest::blocking::Client,
    attempts: u32,
    backoff: Duration,
}

impl LiveClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
        cache_dir: impl Into<PathBuf>,
    ) -> Self {
        LiveClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            cache: ReplayCache::new(cache_dir),
            http: reqwest::blocking::Client::new(),
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    /// Read endpoint and key from `DSA_API_BASE` / `DSA_API_KEY`.
    pub fn from_env(model: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let base = std::env::var(ENV_API_BASE).map_err(|_| ClientError::MissingEnv(ENV_API_BASE))?;
        let key = std::env::var(ENV_API_KEY).map_err(|_| ClientError::MissingEnv(ENV_API_KEY))?;
        Ok(LiveClient::new(base, key, model, cache_dir))
    }

    #[doc(hidden)]
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn call_once(&self, req: &GenerationRequest, hash: &str) -> Result<GenerationResponse, ClientError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "n": req.n_samples,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let resp = self
            .http
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ClientError::Network { hash: hash.to_string(), message: e.to_string() })?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| ClientError::Network { hash: hash.to_string(), message: e.to_string() })?;
        if status != 200 {
            return Err(ClientError::Http { status, hash: hash.to_string(), body: text });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ClientError::MalformedResponse {
                hash: hash.to_string(),
                message: e.to_string(),
            })?;
        let choices = value
            .get("choices")
            .and_then(|c| c.as_array())
            .ok_or_else(|| ClientError::MalformedResponse {
                hash: hash.to_string(),
                message: "missing choices array".into(),
            })?;
        let mut samples = Vec::with_capacity(choices.len());
        for choice in choices {
            let content = choice
                .get("message")
                .and_then(|m| m.get("content"))
                .and_then(|c| c.as_str())
                .ok_or_else(|| ClientError::MalformedResponse {
                    hash: hash.to_string(),
                    message: "choice without message.content".into(),
                })?;
            samples.push(content.to_string());
        }
        if samples.len() != req.n_samples as usize {
            return Err(ClientError::SampleCountMismatch {
                expected: req.n_samples,
                got: samples.len(),
                hash: hash.to_string(),
            });
        }
        let usage = TokenUsage {
            prompt_tokens: value
                .pointer("/usage/prompt_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
            completion_tokens: value
                .pointer("/usage/completion_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
        };
        Ok(GenerationResponse { samples, usage, backend: BackendKind::Live })
    }
}

impl GenerationClient for LiveClient {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        req.validate()?;
        let hash = canonical_request_hash(req);
        let mut last_err = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.call_once(req, &hash) {
                Ok(resp) => {
                    self.cache.store(
                        &hash,
                        &CacheEntry {
                            request: req.clone(),
                            samples: resp.samples.clone(),
                            usage: resp.usage,
                        },
                    )?;
                    return Ok(resp);
                }
                Err(e @ ClientError::InvalidRequest(_)) => return Err(e),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

/// Apply `f` to each item with at most `bound` worker threads, preserving
/// input order in the output.
pub fn bounded_parallel_map<T, U, F>(items: &[T], bound: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    let bound = bound.max(1).min(items.len().max(1));
    if bound == 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<U>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..bound {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}
