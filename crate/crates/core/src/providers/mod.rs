//! Text-generation and embedding capabilities.
//!
//! Offline implementations ([`MockGenerator`], [`ScriptedGenerator`],
//! [`HashEmbedder`]) are bit-reproducible. HTTP adapters for
//! OpenAI-compatible endpoints live behind the `remote` feature.

mod hash_embedder;
mod mock;
#[cfg(feature = "remote")]
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use hash_embedder::HashEmbedder;
pub use mock::{extract_keywords, MockGenerator, ScriptedGenerator};
#[cfg(feature = "remote")]
pub use remote::{RemoteEmbedder, RemoteGenerator, RemoteSettings};

/// Line separating prompt instructions from the data payload. The mock
/// generator keys off it.
pub const INPUT_MARKER: &str = "=== INPUT ===";

/// Which structured reply a request expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    FacetProfile,
    ClusterLabel,
    ParentProposals,
    ParentMerges,
    ParentAssignments,
    ParentNames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationParams {
    /// Profile and synthesis calls.
    pub const PROFILE: Self = Self {
        temperature: 1.0,
        max_tokens: 4096,
    };
    /// Cluster naming and hierarchy calls.
    pub const HIERARCHY: Self = Self {
        temperature: 0.3,
        max_tokens: 1024,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_instruction: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub response_schema: SchemaId,
}

impl GenerationRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>, params: GenerationParams, schema: SchemaId) -> Self {
        Self {
            system_instruction: system.into(),
            user_prompt: user.into(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            response_schema: schema,
        }
    }

    /// Stable hex digest of the prompt pair; used as fixture key and as the
    /// only trace of a request that is ever logged.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_instruction.as_bytes());
        h.update([0u8]);
        h.update(self.user_prompt.as_bytes());
        hex::encode(h.finalize())
    }

    /// Text after [`INPUT_MARKER`], or the whole user prompt.
    pub fn payload(&self) -> &str {
        match self.user_prompt.find(INPUT_MARKER) {
            Some(i) => self.user_prompt[i + INPUT_MARKER.len()..].trim_start_matches('\n'),
            None => &self.user_prompt,
        }
    }

    fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("reply violated {schema:?} after {attempts} attempts: {last_error}")]
    SchemaViolation {
        schema: SchemaId,
        attempts: u32,
        last_error: String,
    },
    #[error("token budget exceeded: {used} + {requested} > {cap}")]
    BudgetExceeded { used: u64, requested: u64, cap: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// How the provider treats submitted data; recorded in run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionMode {
    /// Runs in-process; nothing leaves the machine.
    Local,
    /// Requests carry the provider's no-retention option.
    ZeroRetention,
    /// Provider default retention applies.
    ProviderDefault,
}

pub trait Generator: Send + Sync {
    /// One raw completion.
    fn generate_text(&self, req: &GenerationRequest) -> Result<String, ProviderError>;
    fn fingerprint(&self) -> String;
    fn retention(&self) -> RetentionMode;
    /// Whether identical requests yield identical replies.
    fn reproducible(&self) -> bool;
    fn max_in_flight(&self) -> usize {
        8
    }
}

macro_rules! forward_generator {
    ($($ptr:ident)::+) => {
        impl<G: Generator + ?Sized> Generator for $($ptr)::+<G> {
            fn generate_text(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
                (**self).generate_text(req)
            }
            fn fingerprint(&self) -> String {
                (**self).fingerprint()
            }
            fn retention(&self) -> RetentionMode {
                (**self).retention()
            }
            fn reproducible(&self) -> bool {
                (**self).reproducible()
            }
            fn max_in_flight(&self) -> usize {
                (**self).max_in_flight()
            }
        }
    };
}
forward_generator!(Box);
forward_generator!(std::sync::Arc);

/// Issues `req` and parses the reply, re-prompting with the parse error up to
/// `max_retries` times. A reply is only returned once `parse` accepts it.
pub fn generate<T, F>(gen: &dyn Generator, req: &GenerationRequest, max_retries: u32, parse: F) -> Result<T, ProviderError>
where
    F: Fn(&str) -> Result<T, String>,
{
    req.validate()?;
    let mut attempt_req = req.clone();
    let mut last_error = String::new();
    for attempt in 0..=max_retries {
        if attempt > 0 {
            attempt_req.user_prompt = with_repair_note(&req.user_prompt, &last_error);
        }
        let raw = gen.generate_text(&attempt_req)?;
        match parse(strip_json_fence(&raw)) {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::debug!("schema repair {}/{} for {}", attempt + 1, max_retries, req.fingerprint());
                last_error = e;
            }
        }
    }
    Err(ProviderError::SchemaViolation {
        schema: req.response_schema,
        attempts: max_retries + 1,
        last_error,
    })
}

/// Inserts the repair note ahead of the input marker so the payload stays
/// the final section of the prompt.
fn with_repair_note(prompt: &str, error: &str) -> String {
    let note = format!(
        "Your previous reply could not be used: {error}\nReply again with only the JSON object in the requested format.\n"
    );
    match prompt.find(INPUT_MARKER) {
        Some(i) => format!("{}{note}{}", &prompt[..i], &prompt[i..]),
        None => format!("{prompt}\n\n{note}"),
    }
}

/// Models often wrap JSON in a markdown fence.
fn strip_json_fence(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches("json");
        if let Some(body) = rest.strip_suffix("```") {
            return body.trim();
        }
    }
    t
}

/// Hard cap on estimated tokens (prompt + max reply) across all calls.
pub struct Budgeted<G> {
    inner: G,
    cap: u64,
    used: AtomicU64,
}

impl<G: Generator> Budgeted<G> {
    pub fn new(inner: G, cap: u64) -> Self {
        Self {
            inner,
            cap,
            used: AtomicU64::new(0),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }
}

impl<G: Generator> Generator for Budgeted<G> {
    fn generate_text(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let chars = req.system_instruction.chars().count() + req.user_prompt.chars().count();
        let requested = chars.div_ceil(4) as u64 + u64::from(req.max_tokens);
        let reserved = self
            .used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                (used + requested <= self.cap).then_some(used + requested)
            });
        if let Err(used) = reserved {
            return Err(ProviderError::BudgetExceeded {
                used,
                requested,
                cap: self.cap,
            });
        }
        self.inner.generate_text(req)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn retention(&self) -> RetentionMode {
        self.inner.retention()
    }

    fn reproducible(&self) -> bool {
        self.inner.reproducible()
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub trait Embedder: Send + Sync {
    /// One vector per input, same order. Callers go through [`embed`].
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    fn fingerprint(&self) -> String;
    fn retention(&self) -> RetentionMode;
    fn max_batch(&self) -> usize {
        256
    }
}

macro_rules! forward_embedder {
    ($($ptr:ident)::+) => {
        impl<E: Embedder + ?Sized> Embedder for $($ptr)::+<E> {
            fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
                (**self).embed_batch(texts)
            }
            fn fingerprint(&self) -> String {
                (**self).fingerprint()
            }
            fn retention(&self) -> RetentionMode {
                (**self).retention()
            }
            fn max_batch(&self) -> usize {
                (**self).max_batch()
            }
        }
    };
}
forward_embedder!(Box);
forward_embedder!(std::sync::Arc);

/// Embeds `texts`, enforcing the non-empty preconditions and checking that
/// the provider returned one finite vector per text with a uniform dimension.
pub fn embed(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest("empty embedding batch".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(ProviderError::InvalidRequest(format!("text #{i} is empty")));
    }
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(embedder.max_batch().max(1)) {
        let vectors = embedder.embed_batch(batch)?;
        if vectors.len() != batch.len() {
            return Err(ProviderError::ProviderUnreachable(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                vectors.len()
            )));
        }
        out.extend(vectors);
    }
    let expected = out[0].dim();
    for v in &out {
        if v.dim() != expected {
            return Err(ProviderError::DimensionMismatch {
                expected,
                got: v.dim(),
            });
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::ProviderUnreachable("non-finite embedding value".into()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
