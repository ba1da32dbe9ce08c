//! Uniform contract for text-generation and embedding backends.
//!
//! A [`Gateway`] wraps one backend with retries, a bound on in-flight
//! requests and an optional audit log. Remote backends speak a small
//! JSON-over-HTTP protocol (see [`remote`]); the mock backends in [`mock`] are
//! pure functions of their inputs and seed.

pub mod mock;
mod parse;
pub mod remote;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_numbered_topics, MAX_TOPIC_WORDS};

use crate::vecmath;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected request: {0}")]
    Backend(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("could not parse completion: {message}")]
    Parse { message: String, raw: String },
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    /// Worth retrying: rate limits, server errors, timeouts, I/O.
    Transient(String),
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: u32) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_tokens,
            temperature: 0.0,
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::Precondition("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Precondition("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::Precondition("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unit-norm embedding. Serialized as a bare array of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    /// Normalizes `values`; `None` for a zero or non-finite vector.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        if !vecmath::normalize_in_place(&mut values) {
            return None;
        }
        let norm = vecmath::norm(&values);
        Some(EmbeddingVector { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(values: Vec<f64>) -> Self {
        let norm = vecmath::norm(&values);
        EmbeddingVector { values, norm }
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    RemoteGeneration,
    RemoteEmbedding,
    MockGeneration,
    MockEmbedding,
}

impl BackendKind {
    pub fn is_generation(self) -> bool {
        matches!(self, BackendKind::RemoteGeneration | BackendKind::MockGeneration)
    }

    pub fn is_remote(self) -> bool {
        matches!(self, BackendKind::RemoteGeneration | BackendKind::RemoteEmbedding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Name of the environment variable holding the API key (remote only).
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl BackendDescriptor {
    pub fn mock_generation(seed: u64) -> Self {
        BackendDescriptor {
            kind: BackendKind::MockGeneration,
            endpoint: None,
            model_name: "mock-generation".into(),
            seed: Some(seed),
            api_key_env: None,
        }
    }

    pub fn mock_embedding(seed: u64) -> Self {
        BackendDescriptor {
            kind: BackendKind::MockEmbedding,
            endpoint: None,
            model_name: "mock-embedding".into(),
            seed: Some(seed),
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.kind.is_remote() && self.endpoint.is_none() {
            return Err(GatewayError::Usage(format!(
                "{:?} backend {} requires an endpoint",
                self.kind, self.model_name
            )));
        }
        if !self.kind.is_remote() && self.seed.is_none() {
            return Err(GatewayError::Usage(format!(
                "{:?} backend {} requires a seed",
                self.kind, self.model_name
            )));
        }
        Ok(())
    }
}

/// Exponential backoff without jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails fatally, or the budget is spent.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendFailure>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(BackendFailure::Fatal(m)) => return Err(GatewayError::Backend(m)),
                Err(BackendFailure::Transient(m)) => {
                    if attempt > self.max_retries {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message: m,
                        });
                    }
                    log::debug!("transient backend failure (attempt {attempt}): {m}");
                    std::thread::sleep(self.delay(attempt - 1));
                }
            }
        }
    }
}

pub trait TextGenerator: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendFailure>;
}

pub trait TextEmbedder: Send + Sync {
    /// Raw, not necessarily normalized, vectors in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayOptions {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub embed_batch_size: usize,
    pub audit_path: Option<PathBuf>,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            timeout: Duration::from_secs(60),
            embed_batch_size: 64,
            audit_path: None,
        }
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

enum Engine {
    Generation(Box<dyn TextGenerator>),
    Embedding(Box<dyn TextEmbedder>),
}

pub struct Gateway {
    descriptor: BackendDescriptor,
    engine: Engine,
    options: GatewayOptions,
    limiter: Limiter,
    audit: Option<Mutex<File>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("descriptor", &self.descriptor)
            .field("options", &self.options)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(descriptor: BackendDescriptor, options: GatewayOptions) -> Result<Self, GatewayError> {
        descriptor.validate()?;
        let engine = match descriptor.kind {
            BackendKind::MockGeneration => Engine::Generation(Box::new(mock::MockGenerator::new(
                descriptor.seed.expect("validated"),
            ))),
            BackendKind::MockEmbedding => Engine::Embedding(Box::new(mock::MockEmbedder::new(
                descriptor.seed.expect("validated"),
                mock::DEFAULT_MOCK_DIM,
            ))),
            BackendKind::RemoteGeneration => Engine::Generation(Box::new(
                remote::RemoteBackend::from_descriptor(&descriptor, options.timeout)?,
            )),
            BackendKind::RemoteEmbedding => Engine::Embedding(Box::new(
                remote::RemoteBackend::from_descriptor(&descriptor, options.timeout)?,
            )),
        };
        Self::assemble(descriptor, engine, options)
    }

    /// Gateway over a caller-supplied generator.
    pub fn with_generator(
        descriptor: BackendDescriptor,
        generator: Box<dyn TextGenerator>,
        options: GatewayOptions,
    ) -> Result<Self, GatewayError> {
        if !descriptor.kind.is_generation() {
            return Err(GatewayError::Usage("generator needs a generation descriptor".into()));
        }
        Self::assemble(descriptor, Engine::Generation(generator), options)
    }

    pub fn with_embedder(
        descriptor: BackendDescriptor,
        embedder: Box<dyn TextEmbedder>,
        options: GatewayOptions,
    ) -> Result<Self, GatewayError> {
        if descriptor.kind.is_generation() {
            return Err(GatewayError::Usage("embedder needs an embedding descriptor".into()));
        }
        Self::assemble(descriptor, Engine::Embedding(embedder), options)
    }

    fn assemble(
        descriptor: BackendDescriptor,
        engine: Engine,
        options: GatewayOptions,
    ) -> Result<Self, GatewayError> {
        let audit = match &options.audit_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| GatewayError::Usage(format!("cannot open audit file: {e}")))?,
            )),
            None => None,
        };
        Ok(Gateway {
            limiter: Limiter::new(options.max_in_flight),
            descriptor,
            engine,
            options,
            audit,
        })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn audit(&self, request: serde_json::Value, response: serde_json::Value) {
        if let Some(file) = &self.audit {
            let line = serde_json::json!({
                "model": self.descriptor.model_name,
                "request": request,
                "response": response,
            });
            let mut f = file.lock().expect("audit log poisoned");
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("audit write failed: {e}");
            }
        }
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let Engine::Generation(generator) = &self.engine else {
            return Err(GatewayError::Usage(format!(
                "{} is not a generation backend",
                self.descriptor.model_name
            )));
        };
        request.validate()?;
        let result = {
            let _permit = self.limiter.acquire();
            self.options.retry.run(|| generator.complete(request))
        };
        let response = match &result {
            Ok(text) => serde_json::json!({ "output": text }),
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        };
        self.audit(serde_json::to_value(request).unwrap_or_default(), response);
        result
    }

    /// One unit-norm vector per input, in input order.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let Engine::Embedding(embedder) = &self.engine else {
            return Err(GatewayError::Usage(format!(
                "{} is not an embedding backend",
                self.descriptor.model_name
            )));
        };
        if texts.is_empty() {
            return Err(GatewayError::Precondition("no texts to embed".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.options.embed_batch_size.max(1)) {
            let raw = {
                let _permit = self.limiter.acquire();
                self.options.retry.run(|| embedder.embed(chunk))?
            };
            if raw.len() != chunk.len() {
                return Err(GatewayError::Internal(format!(
                    "backend returned {} vectors for {} texts",
                    raw.len(),
                    chunk.len()
                )));
            }
            self.audit(
                serde_json::json!({ "inputs": chunk }),
                serde_json::json!({ "vectors": raw.len() }),
            );
            for (text, v) in chunk.iter().zip(raw) {
                let vector = EmbeddingVector::normalized(v).ok_or_else(|| {
                    GatewayError::Internal(format!("zero or non-finite embedding for {text:?}"))
                })?;
                out.push(vector);
            }
        }
        let dim = out[0].dim();
        if let Some(bad) = out.iter().find(|v| v.dim() != dim) {
            return Err(GatewayError::Internal(format!(
                "dimension mismatch in batch: {} vs {}",
                dim,
                bad.dim()
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
    use std::sync::Arc;

    fn mock_gen(seed: u64) -> Gateway {
        Gateway::new(BackendDescriptor::mock_generation(seed), GatewayOptions::default()).unwrap()
    }

    fn mock_embed(seed: u64) -> Gateway {
        Gateway::new(BackendDescriptor::mock_embedding(seed), GatewayOptions::default()).unwrap()
    }

    #[test]
    fn mock_generation_is_deterministic() {
        let g = mock_gen(7);
        let req = GenerationRequest::new("hello there", 16);
        assert_eq!(g.generate(&req).unwrap(), g.generate(&req).unwrap());
        assert_eq!(g.generate(&req).unwrap(), mock_gen(7).generate(&req).unwrap());
    }

    #[test]
    fn wrong_backend_kind_is_usage_error() {
        let e = mock_embed(1);
        assert!(matches!(
            e.generate(&GenerationRequest::new("x", 1)),
            Err(GatewayError::Usage(_))
        ));
        let g = mock_gen(1);
        assert!(matches!(g.embed_batch(&["x".into()]), Err(GatewayError::Usage(_))));
    }

    #[test]
    fn descriptor_validation() {
        let mut d = BackendDescriptor::mock_generation(1);
        d.seed = None;
        assert!(matches!(d.validate(), Err(GatewayError::Usage(_))));
        let remote = BackendDescriptor {
            kind: BackendKind::RemoteGeneration,
            endpoint: None,
            model_name: "m".into(),
            seed: None,
            api_key_env: None,
        };
        assert!(matches!(remote.validate(), Err(GatewayError::Usage(_))));
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(
            mock_gen(1).generate(&GenerationRequest::new("", 4)),
            Err(GatewayError::Precondition(_))
        ));
    }

    #[test]
    fn embed_batch_contract() {
        let e = mock_embed(3);
        let v = e.embed_batch(&["a".into(), "a".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert!(matches!(e.embed_batch(&[]), Err(GatewayError::Precondition(_))));
        let three = e
            .embed_batch(&["press freedom".into(), "media bias".into(), "x".into()])
            .unwrap();
        assert_eq!(three.len(), 3);
        for v in &three {
            assert!((v.norm() - 1.0).abs() <= 1e-6);
            assert!((vecmath::norm(v.values()) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn retry_recovers_from_transient_failures() {
        let calls = AtomicU32::new(0);
        let r = RetryPolicy::no_delay(3).run(|| {
            if calls.fetch_add(1, Ordering::SeqCst) < 3 {
                Err(BackendFailure::Transient("429".into()))
            } else {
                Ok(42)
            }
        });
        assert_eq!(r.unwrap(), 42);
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn retry_budget_exhaustion_is_transport_error() {
        let r: Result<(), _> =
            RetryPolicy::no_delay(2).run(|| Err(BackendFailure::Transient("503".into())));
        assert!(matches!(r, Err(GatewayError::Transport { attempts: 3, .. })));
        let r: Result<(), _> = RetryPolicy::no_delay(5).run(|| Err(BackendFailure::Fatal("400".into())));
        assert!(matches!(r, Err(GatewayError::Backend(_))));
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(1),
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(800));
        assert_eq!(p.delay(4), Duration::from_secs(1));
        assert_eq!(p.delay(40), Duration::from_secs(1));
    }

    struct Slow {
        current: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }

    impl TextGenerator for Slow {
        fn complete(&self, _: &GenerationRequest) -> Result<String, BackendFailure> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
    }

    #[test]
    fn in_flight_bound_is_respected() {
        let peak = Arc::new(AtomicUsize::new(0));
        let g = Gateway::with_generator(
            BackendDescriptor::mock_generation(0),
            Box::new(Slow {
                current: Arc::new(AtomicUsize::new(0)),
                peak: peak.clone(),
            }),
            GatewayOptions {
                max_in_flight: 2,
                ..GatewayOptions::default()
            },
        )
        .unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| g.generate(&GenerationRequest::new("p", 1)).unwrap());
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn audit_log_records_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let g = Gateway::new(
            BackendDescriptor::mock_generation(1),
            GatewayOptions {
                audit_path: Some(path.clone()),
                ..GatewayOptions::default()
            },
        )
        .unwrap();
        g.generate(&GenerationRequest::new("one", 8)).unwrap();
        g.generate(&GenerationRequest::new("two", 8)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["request"]["prompt"], "one");
        assert!(first["response"]["output"].is_string());
    }

    struct Ragged;

    impl TextEmbedder for Ragged {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure> {
            Ok(texts.iter().map(|t| vec![1.0; t.len()]).collect())
        }
    }

    #[test]
    fn dimension_mismatch_is_internal_error() {
        let g = Gateway::with_embedder(
            BackendDescriptor::mock_embedding(0),
            Box::new(Ragged),
            GatewayOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            g.embed_batch(&["ab".into(), "abc".into()]),
            Err(GatewayError::Internal(_))
        ));
    }
}
