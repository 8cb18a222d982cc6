//! Chat-completion and embedding clients with deterministic disk caching.
//!
//! A [`Provider`] is a raw transport (one attempt, no persistence). The
//! [`Gateway`] wraps it with a content-addressed response cache, bounded
//! in-flight concurrency, an optional token-bucket rate limit, and
//! exponential-backoff retries for transient failures. Identical requests
//! are never issued to a provider twice, including across process restarts.

mod cache;
mod http;

pub use cache::DiskCache;
pub use http::{HttpEndpoint, HttpProvider};

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{Embedding, KernelError};

/// One chat-completion request. `sample_index` distinguishes repeated draws
/// of the same prompt in the cache; it is never sent to the provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub sample_index: u32,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) || !self.temperature.is_finite() {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.model.is_empty() {
            return Err(GatewayError::InvalidRequest("empty model name".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Raw provider reply for a chat call.
#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

/// Raw provider reply for an embeddings call, vectors in input order.
#[derive(Debug, Clone)]
pub struct EmbedReply {
    pub vectors: Vec<Vec<f64>>,
    pub usage: Option<TokenUsage>,
}

/// Classification of a single failed provider attempt.
#[derive(Debug, Error)]
pub enum CallFailure {
    #[error("provider returned {status}: {message}")]
    Permanent { status: u16, message: String },
    #[error("transient failure: {message}")]
    Retryable { message: String },
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider rejected request with status {status}: {message}")]
    Permanent { status: u16, message: String },
    #[error("giving up after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("cache I/O failure: {0}")]
    Cache(#[from] std::io::Error),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Embedding(#[from] KernelError),
}

/// Raw transport to a chat/embedding provider. One attempt per call; the
/// gateway owns retries and caching.
pub trait Provider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, CallFailure>;
    fn embed(&self, model: &str, texts: &[String]) -> Result<EmbedReply, CallFailure>;
}

/// Time source, injectable so backoff and stage timings are testable.
pub trait Clock: Send + Sync {
    /// Monotonic time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Exponential backoff: retry k waits base * factor^(k-1) before running.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    fn delay_before_retry(&self, retry_index: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry_index as i32))
    }
}

/// Token bucket; `acquire` blocks (via the clock) until a token is free.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RateLimit {
    pub requests_per_second: f64,
    pub burst: u32,
}

struct TokenBucket {
    state: Mutex<BucketState>,
    rate: f64,
    capacity: f64,
}

struct BucketState {
    tokens: f64,
    last_refill: Duration,
}

impl TokenBucket {
    fn new(limit: RateLimit, now: Duration) -> Self {
        let capacity = limit.burst.max(1) as f64;
        Self {
            state: Mutex::new(BucketState {
                tokens: capacity,
                last_refill: now,
            }),
            rate: limit.requests_per_second,
            capacity,
        }
    }

    fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket poisoned");
                let now = clock.now();
                let elapsed = now.saturating_sub(state.last_refill);
                state.tokens =
                    (state.tokens + elapsed.as_secs_f64() * self.rate).min(self.capacity);
                state.last_refill = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.tokens) / self.rate)
            };
            clock.sleep(wait);
        }
    }
}

/// Counting semaphore bounding concurrent in-flight provider calls.
struct Slots {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Slots {
    fn new(count: usize) -> Self {
        Self {
            available: Mutex::new(count.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut available = self.available.lock().expect("slots poisoned");
        while *available == 0 {
            available = self.freed.wait(available).expect("slots poisoned");
        }
        *available -= 1;
        SlotGuard { slots: self }
    }
}

struct SlotGuard<'a> {
    slots: &'a Slots,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.slots.available.lock().expect("slots poisoned") += 1;
        self.slots.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub cache_root: std::path::PathBuf,
    pub max_in_flight: usize,
    pub rate_limit: Option<RateLimit>,
    pub retry: RetryPolicy,
}

impl GatewaySettings {
    pub fn new(cache_root: impl Into<std::path::PathBuf>) -> Self {
        Self {
            cache_root: cache_root.into(),
            max_in_flight: 8,
            rate_limit: None,
            retry: RetryPolicy::default(),
        }
    }
}

/// Cached, rate-limited, retrying front door to a [`Provider`].
pub struct Gateway {
    provider: Box<dyn Provider>,
    cache: DiskCache,
    clock: std::sync::Arc<dyn Clock>,
    limiter: Option<TokenBucket>,
    slots: Slots,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(
        provider: Box<dyn Provider>,
        settings: GatewaySettings,
        clock: std::sync::Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        let cache = DiskCache::new(&settings.cache_root)?;
        let limiter = settings
            .rate_limit
            .map(|l| TokenBucket::new(l, clock.now()));
        Ok(Self {
            provider,
            cache,
            clock,
            limiter,
            slots: Slots::new(settings.max_in_flight),
            retry: settings.retry,
        })
    }

    /// First completion text for the request; cache hit skips the provider.
    pub fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let key = cache::chat_key(request);
        if let Some(entry) = self.cache.load(&key) {
            return Ok(entry.response_text);
        }
        let reply = self.call_with_retry(|| self.provider.chat(request))?;
        self.cache.store(&key, &reply.text, reply.usage)?;
        Ok(reply.text)
    }

    /// One unit-norm embedding per input text, order preserved. Each
    /// (model, text) pair is cached individually; only misses reach the
    /// provider, as a single batch.
    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let keys: Vec<String> = texts.iter().map(|t| cache::embed_key(model, t)).collect();
        let mut vectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
        for key in &keys {
            vectors.push(
                self.cache
                    .load(key)
                    .and_then(|e| parse_vector(&e.response_text)),
            );
        }

        // Deduplicate misses so repeated texts cost one provider slot.
        let mut miss_texts: Vec<String> = Vec::new();
        let mut miss_positions: Vec<Vec<usize>> = Vec::new();
        for (i, v) in vectors.iter().enumerate() {
            if v.is_some() {
                continue;
            }
            match miss_texts.iter().position(|t| t == &texts[i]) {
                Some(j) => miss_positions[j].push(i),
                None => {
                    miss_texts.push(texts[i].clone());
                    miss_positions.push(vec![i]);
                }
            }
        }

        if !miss_texts.is_empty() {
            let reply = self.call_with_retry(|| self.provider.embed(model, &miss_texts))?;
            if reply.vectors.len() != miss_texts.len() {
                return Err(GatewayError::MalformedResponse(format!(
                    "asked for {} embeddings, got {}",
                    miss_texts.len(),
                    reply.vectors.len()
                )));
            }
            for (j, vector) in reply.vectors.into_iter().enumerate() {
                let serialized = serde_json::to_string(&vector)
                    .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
                self.cache
                    .store(&keys[miss_positions[j][0]], &serialized, reply.usage)?;
                for &i in &miss_positions[j] {
                    vectors[i] = Some(vector.clone());
                }
            }
        }

        vectors
            .into_iter()
            .map(|v| Embedding::new(v.expect("all embeddings resolved")).map_err(Into::into))
            .collect()
    }

    fn call_with_retry<T>(
        &self,
        call: impl Fn() -> Result<T, CallFailure>,
    ) -> Result<T, GatewayError> {
        let _slot = self.slots.acquire();
        let mut last_message = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                self.clock.sleep(self.retry.delay_before_retry(attempt - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire(self.clock.as_ref());
            }
            match call() {
                Ok(reply) => return Ok(reply),
                Err(CallFailure::Permanent { status, message }) => {
                    return Err(GatewayError::Permanent { status, message });
                }
                Err(CallFailure::Retryable { message }) => {
                    log::warn!("attempt {} failed: {message}", attempt + 1);
                    last_message = message;
                }
            }
        }
        Err(GatewayError::Exhausted {
            attempts: self.retry.max_attempts,
            message: last_message,
        })
    }
}

fn parse_vector(text: &str) -> Option<Vec<f64>> {
    serde_json::from_str(text).ok()
}
