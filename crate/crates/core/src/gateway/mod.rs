//! Uniform access to chat-completion and embedding backends.
//!
//! A [`Gateway`] wraps a [`Backend`] with retries, an optional token-bucket
//! rate limiter and usage counters. Backends are the HTTP client in
//! [`http`], the scripted [`mock`], and the record/replay [`cassette`]
//! layer that can sit in front of either.

pub mod cassette;
pub mod http;
pub mod mock;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteBackend, CassetteMode};
pub use http::{HttpResponse, HttpTransport, OpenAiBackend, UreqTransport};
pub use mock::{MockBackend, MockRule, MockScript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("mock script has no response for request {fingerprint}")]
    ScriptExhausted { fingerprint: String },
    #[error("cassette has no entry for request {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("{0}")]
    Unsupported(String),
}

impl GatewayError {
    /// Only transport failures are retried.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

pub type GatewayResult<T> = Result<T, GatewayError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Template tag (`id@vN`). Not part of the fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Serialize)]
struct FingerprintFields<'a> {
    system_prompt: &'a str,
    user_prompt: &'a str,
    temperature: f64,
    seed: Option<u64>,
    max_output_tokens: u32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            seed: None,
            tag: None,
        }
    }

    pub fn from_prompt(prompt: crate::prompts::RenderedPrompt) -> Self {
        Self::new(prompt.system, prompt.user).with_tag(prompt.tag)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_tokens(mut self, max_output_tokens: u32) -> Self {
        self.max_output_tokens = max_output_tokens;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    /// Stable hash of (system, user, temperature, seed, max tokens).
    pub fn fingerprint(&self) -> String {
        let fields = FingerprintFields {
            system_prompt: &self.system_prompt,
            user_prompt: &self.user_prompt,
            temperature: self.temperature,
            seed: self.seed,
            max_output_tokens: self.max_output_tokens,
        };
        sha256_hex(&serde_json::to_vec(&fields).expect("fingerprint fields serialize"))
    }

    pub fn validate(&self) -> GatewayResult<()> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "prompts must be non-empty".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub texts: Vec<String>,
}

impl EmbeddingRequest {
    pub fn new<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            texts: texts.into_iter().map(Into::into).collect(),
        }
    }

    pub fn fingerprint(&self) -> String {
        let v = serde_json::json!({ "embed": self.texts });
        sha256_hex(&serde_json::to_vec(&v).expect("embedding request serializes"))
    }

    pub fn validate(&self) -> GatewayResult<()> {
        if self.texts.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "embedding request has no texts".into(),
            ));
        }
        if self.texts.iter().any(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(
                "embedding text is empty".into(),
            ));
        }
        Ok(())
    }
}

/// A text-generation and embedding provider.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> GatewayResult<String>;
    fn embed(&self, request: &EmbeddingRequest) -> GatewayResult<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub requests_per_second: f64,
    pub burst: u32,
}

struct TokenBucket {
    limit: RateLimit,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(limit: RateLimit) -> Self {
        Self {
            limit,
            state: Mutex::new((f64::from(limit.burst.max(1)), Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                let cap = f64::from(self.limit.burst.max(1));
                state.0 = (state.0 + elapsed * self.limit.requests_per_second).min(cap);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.limit.requests_per_second.max(1e-9)
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// Call counters for one gateway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub retries: u64,
    pub failures: u64,
}

impl std::ops::Add for Usage {
    type Output = Usage;

    fn add(self, o: Usage) -> Usage {
        Usage {
            chat_calls: self.chat_calls + o.chat_calls,
            embed_calls: self.embed_calls + o.embed_calls,
            retries: self.retries + o.retries,
            failures: self.failures + o.failures,
        }
    }
}

#[derive(Default)]
struct Counters {
    chat: AtomicU64,
    embed: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

/// Retrying, rate-limited, counted client over a backend. Cheap to clone;
/// clones share counters.
#[derive(Clone)]
pub struct Gateway {
    name: String,
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Option<Arc<TokenBucket>>,
    counters: Arc<Counters>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("name", &self.name)
            .field("backend", &self.backend.id())
            .finish()
    }
}

impl Gateway {
    pub fn new(name: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        Self {
            name: name.into(),
            backend,
            retry: RetryPolicy::default(),
            limiter: None,
            counters: Arc::new(Counters::default()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, limit: RateLimit) -> Self {
        self.limiter = Some(Arc::new(TokenBucket::new(limit)));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn usage(&self) -> Usage {
        Usage {
            chat_calls: self.counters.chat.load(Ordering::Relaxed),
            embed_calls: self.counters.embed.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> GatewayResult<T>) -> GatewayResult<T> {
        let mut attempt = 0u32;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    let delay = self
                        .retry
                        .backoff_base_ms
                        .saturating_mul(1 << attempt.min(16));
                    attempt += 1;
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!("{}: transient failure ({e}), retry {attempt}", self.name);
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(e) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(match e {
                        GatewayError::Transport { message, .. } => GatewayError::Transport {
                            attempts: attempt + 1,
                            message,
                        },
                        other => other,
                    });
                }
            }
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> GatewayResult<String> {
        request.validate()?;
        self.counters.chat.fetch_add(1, Ordering::Relaxed);
        self.with_retries(|| self.backend.complete(request))
    }

    /// One unit-norm vector per input text.
    pub fn embed(&self, request: &EmbeddingRequest) -> GatewayResult<Vec<Vec<f64>>> {
        request.validate()?;
        self.counters.embed.fetch_add(1, Ordering::Relaxed);
        let raw = self.with_retries(|| self.backend.embed(request))?;
        if raw.len() != request.texts.len() {
            return Err(GatewayError::Protocol(format!(
                "expected {} embeddings, got {}",
                request.texts.len(),
                raw.len()
            )));
        }
        raw.into_iter().map(unit_norm).collect()
    }
}

pub(crate) fn unit_norm(mut v: Vec<f64>) -> GatewayResult<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(GatewayError::Protocol(
            "embedding has zero or non-finite norm".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-style `/chat/completions` and `/embeddings` over HTTP.
    #[default]
    Openai,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteConfig {
    pub mode: CassetteMode,
    pub path: PathBuf,
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1".into()
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// Named backend configuration. Concrete model ids live here, not in code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<RateLimit>,
    /// Mock script file (mock profiles only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<CassetteConfig>,
}

impl BackendProfile {
    pub fn mock(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model: "mock".into(),
            embedding_model: None,
            auth_env: None,
            request_timeout_ms: default_timeout_ms(),
            retry: RetryPolicy {
                max_retries: 0,
                backoff_base_ms: 0,
            },
            rate_limit: None,
            script: None,
            cassette: None,
        }
    }

    /// Returns a copy that records to or replays from `path`.
    pub fn record_replay(&self, mode: CassetteMode, path: impl Into<PathBuf>) -> Self {
        let mut p = self.clone();
        p.cassette = Some(CassetteConfig {
            mode,
            path: path.into(),
        });
        p
    }

    pub fn validate(&self) -> GatewayResult<()> {
        if self.request_timeout_ms == 0 {
            return Err(GatewayError::InvalidRequest(format!(
                "profile `{}`: timeout must be > 0",
                self.name
            )));
        }
        Ok(())
    }
}

/// Builds the backend a profile describes, without cassette wrapping.
pub fn build_backend(profile: &BackendProfile) -> GatewayResult<Arc<dyn Backend>> {
    match profile.kind {
        BackendKind::Mock => {
            let script = match &profile.script {
                Some(path) => MockScript::load(path)?,
                None => {
                    return Err(GatewayError::InvalidRequest(format!(
                        "mock profile `{}` needs a script",
                        profile.name
                    )))
                }
            };
            Ok(Arc::new(MockBackend::new(profile.name.clone(), script)))
        }
        BackendKind::Openai => {
            let env = profile.auth_env.as_deref().unwrap_or("OPENAI_API_KEY");
            let key = std::env::var(env)
                .ok()
                .filter(|k| !k.trim().is_empty())
                .ok_or_else(|| {
                    GatewayError::Auth(format!("environment variable `{env}` is not set"))
                })?;
            Ok(Arc::new(OpenAiBackend::new(
                profile.name.clone(),
                profile.endpoint.clone(),
                profile.model.clone(),
                profile.embedding_model.clone(),
                Some(key),
                Duration::from_millis(profile.request_timeout_ms),
                Arc::new(UreqTransport),
            )))
        }
    }
}

/// Resolves a profile into a ready gateway. Replay profiles never build the
/// underlying backend, so they need neither credentials nor network.
pub fn connect(profile: &BackendProfile) -> GatewayResult<Gateway> {
    let backend = open_backend(profile)?;
    Ok(gateway_for(profile.name.clone(), profile, backend))
}

/// The backend of a profile with its cassette wrapping applied. Open each
/// profile once and share the result between gateways.
pub fn open_backend(profile: &BackendProfile) -> GatewayResult<Arc<dyn Backend>> {
    profile.validate()?;
    Ok(match &profile.cassette {
        Some(c) if c.mode == CassetteMode::Replay => Arc::new(CassetteBackend::replay(
            profile.name.clone(),
            Cassette::open(&c.path)?,
        )),
        Some(c) => {
            let inner = build_backend(profile)?;
            Arc::new(CassetteBackend::record(inner, Cassette::open(&c.path)?))
        }
        None => build_backend(profile)?,
    })
}

/// A gateway named `name` over `backend` with the profile's retry and rate
/// limit settings.
pub fn gateway_for(
    name: impl Into<String>,
    profile: &BackendProfile,
    backend: Arc<dyn Backend>,
) -> Gateway {
    let mut gw = Gateway::new(name, backend).with_retry(profile.retry);
    if let Some(limit) = profile.rate_limit {
        gw = gw.with_rate_limit(limit);
    }
    gw
}
