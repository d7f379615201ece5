//! Annotation layers produced through a pluggable annotator client.

mod mock;
mod orchestrate;
mod qc;
mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use mock::{mock_output, MockAnnotator, MOCK_VERSION};
pub use orchestrate::{enrich_all, EnrichConfig, EnrichStats, Layer};
pub use qc::{qc_validate, QcVerdict, ARABIC_SCRIPT_LANGUAGES};
pub use remote::RemoteAnnotator;

use crate::model::{ensure, InvariantViolation, Validate};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AnnotationTask {
    Translate(String),
    Diacritize,
    Summarize,
    KeyPoints,
    Tag,
    SegmentWindow,
    ClassifyHadith,
    Embed,
}

impl fmt::Display for AnnotationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Translate(lang) => write!(f, "translate:{lang}"),
            Self::Diacritize => f.write_str("diacritize"),
            Self::Summarize => f.write_str("summarize"),
            Self::KeyPoints => f.write_str("key_points"),
            Self::Tag => f.write_str("tag"),
            Self::SegmentWindow => f.write_str("segment_window"),
            Self::ClassifyHadith => f.write_str("classify_hadith"),
            Self::Embed => f.write_str("embed"),
        }
    }
}

impl FromStr for AnnotationTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(lang) = s.strip_prefix("translate:") {
            if lang.is_empty() {
                return Err("translate task needs a language code".into());
            }
            return Ok(Self::Translate(lang.to_string()));
        }
        match s {
            "diacritize" => Ok(Self::Diacritize),
            "summarize" => Ok(Self::Summarize),
            "key_points" => Ok(Self::KeyPoints),
            "tag" => Ok(Self::Tag),
            "segment_window" => Ok(Self::SegmentWindow),
            "classify_hadith" => Ok(Self::ClassifyHadith),
            "embed" => Ok(Self::Embed),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

impl From<AnnotationTask> for String {
    fn from(t: AnnotationTask) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for AnnotationTask {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub request_id: String,
    pub task: AnnotationTask,
    pub input_text: String,
    /// Optional extras such as the book title or adjacent text.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context: BTreeMap<String, String>,
}

impl AnnotationRequest {
    pub fn new(request_id: impl Into<String>, task: AnnotationTask, input_text: impl Into<String>) -> Self {
        Self { request_id: request_id.into(), task, input_text: input_text.into(), context: BTreeMap::new() }
    }
}

impl Validate for AnnotationRequest {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(!self.request_id.is_empty(), "request_id non-empty", || "empty request_id".into())?;
        ensure(!self.input_text.trim().is_empty(), "input_text non-empty", || format!("request {}", self.request_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub request_id: String,
    pub output: String,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("retryable transport error: {0}")]
    Retryable(String),
    #[error("fatal transport error: {0}")]
    Fatal(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// One round trip to an annotation backend. Retries, backoff and rate
/// limiting are layered on top by [`Annotator`].
pub trait AnnotatorClient: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &AnnotationRequest) -> Result<AnnotationResponse, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotatorClientConfig {
    pub endpoint: String,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
    /// Requests per second.
    pub rate_limit: f64,
    pub timeout_ms: u64,
    /// Narrations enriched concurrently.
    pub concurrency: usize,
}

impl Default for AnnotatorClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8700/annotate".into(),
            max_attempts: 3,
            initial_backoff_ms: 200,
            backoff_multiplier: 2.0,
            rate_limit: 20.0,
            timeout_ms: 30_000,
            concurrency: 8,
        }
    }
}

impl Validate for AnnotatorClientConfig {
    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure(self.max_attempts >= 1, "max_attempts >= 1", || format!("max_attempts = {}", self.max_attempts))?;
        ensure(self.initial_backoff_ms > 0, "initial backoff > 0", || "initial_backoff_ms = 0".into())?;
        ensure(self.backoff_multiplier > 0.0, "backoff multiplier > 0", || {
            format!("backoff_multiplier = {}", self.backoff_multiplier)
        })?;
        ensure(self.rate_limit > 0.0, "rate limit > 0", || format!("rate_limit = {}", self.rate_limit))?;
        ensure(self.timeout_ms > 0, "timeout > 0", || "timeout_ms = 0".into())?;
        ensure(self.concurrency > 0, "concurrency > 0", || "concurrency = 0".into())
    }
}

/// Time source for provenance timestamps, backoff and rate limiting.
pub trait Clock: Send + Sync {
    /// Wall-clock seconds since the Unix epoch.
    fn unix_secs(&self) -> u64;
    /// Monotonic time since an arbitrary origin.
    fn elapsed(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn unix_secs(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }

    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Clock that never blocks: sleeping advances virtual time. Timestamps are
/// fixed, which makes runs reproducible byte for byte.
#[derive(Default)]
pub struct ManualClock {
    epoch: u64,
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn new(epoch: u64) -> Self {
        Self { epoch, now: Mutex::new(Duration::ZERO) }
    }

    /// Total virtual time slept so far.
    pub fn slept(&self) -> Duration {
        *self.now.lock().expect("clock lock")
    }
}

impl Clock for ManualClock {
    fn unix_secs(&self) -> u64 {
        self.epoch
    }

    fn elapsed(&self) -> Duration {
        self.slept()
    }

    fn sleep(&self, d: Duration) {
        *self.now.lock().expect("clock lock") += d;
    }
}

/// Client-side token bucket.
#[derive(Debug)]
struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Duration,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        Self { rate, capacity, tokens: capacity, last: Duration::ZERO }
    }

    fn acquire(&mut self, clock: &dyn Clock) {
        loop {
            let now = clock.elapsed();
            let dt = now.saturating_sub(self.last).as_secs_f64();
            self.last = now;
            self.tokens = (self.tokens + dt * self.rate).min(self.capacity);
            if self.tokens >= 1.0 {
                self.tokens -= 1.0;
                return;
            }
            clock.sleep(Duration::from_secs_f64((1.0 - self.tokens) / self.rate));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub output: String,
    pub model_version: String,
    pub attempts: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("annotation failed after {attempts} attempt(s): {reason}")]
pub struct AnnotateFailure {
    pub reason: String,
    pub attempts: u32,
    pub timestamp: u64,
}

/// A client wrapped with retry, exponential backoff and rate limiting.
pub struct Annotator {
    client: Arc<dyn AnnotatorClient>,
    config: AnnotatorClientConfig,
    clock: Arc<dyn Clock>,
    bucket: Mutex<TokenBucket>,
    sent: AtomicU64,
}

impl Annotator {
    pub fn new(client: Arc<dyn AnnotatorClient>, config: AnnotatorClientConfig, clock: Arc<dyn Clock>) -> Self {
        let bucket = Mutex::new(TokenBucket::new(config.rate_limit));
        Self { client, config, clock, bucket, sent: AtomicU64::new(0) }
    }

    /// The shipped mock with a non-blocking clock.
    pub fn mock() -> Self {
        Self::new(Arc::new(MockAnnotator), AnnotatorClientConfig::default(), Arc::new(ManualClock::new(0)))
    }

    pub fn name(&self) -> &str {
        self.client.name()
    }

    pub fn config(&self) -> &AnnotatorClientConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.clock.unix_secs()
    }

    /// Requests handed to the transport so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn annotate(&self, request: &AnnotationRequest) -> Result<Annotation, AnnotateFailure> {
        let fail = |reason: String, attempts| AnnotateFailure { reason, attempts, timestamp: self.clock.unix_secs() };
        if let Err(v) = request.validate() {
            return Err(fail(v.to_string(), 0));
        }
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts {
            self.bucket.lock().expect("rate limiter lock").acquire(self.clock.as_ref());
            self.sent.fetch_add(1, Ordering::Relaxed);
            match self.client.send(request) {
                Ok(resp) if resp.request_id == request.request_id => {
                    return Ok(Annotation {
                        output: resp.output,
                        model_version: resp.model_version,
                        attempts: attempt,
                        timestamp: self.clock.unix_secs(),
                    });
                }
                Ok(resp) => {
                    last_error =
                        TransportError::Malformed(format!("response for request {}", resp.request_id)).to_string();
                }
                Err(e @ TransportError::Fatal(_)) => return Err(fail(e.to_string(), attempt)),
                Err(e) => last_error = e.to_string(),
            }
            if attempt < self.config.max_attempts {
                tracing::debug!(request = %request.request_id, attempt, "retrying annotation");
                self.clock.sleep(backoff);
                backoff = backoff.mul_f64(self.config.backoff_multiplier);
            }
        }
        Err(fail(last_error, self.config.max_attempts))
    }
}
