use crate::exec::Execution;

use super::{Embedder, EmbeddingVector, ProviderError, RetentionMode};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Feature-hashing embedder.
///
/// Text is split on whitespace; each token is lowercased and stripped of
/// leading/trailing non-alphanumerics, then hashed with 64-bit FNV-1a. The
/// hash picks bucket `h % dim` and a sign from the top bit. The summed
/// vector is L2-normalised (an all-punctuation text stays the zero vector).
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    exec: Execution,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0f64; self.dim];
        for raw in text.split_whitespace() {
            let token = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            if token.is_empty() {
                continue;
            }
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[(h % self.dim as u64) as usize] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector { values }
    }
}

impl Embedder for HashEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(self.exec.map(texts, |t| self.embed_one(t)))
    }

    fn fingerprint(&self) -> String {
        format!("hash-embedder/fnv1a/dim={}", self.dim)
    }

    fn retention(&self) -> RetentionMode {
        RetentionMode::Local
    }

    fn max_batch(&self) -> usize {
        usize::MAX
    }
}
