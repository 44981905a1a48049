//! Text-to-vector providers and similarity math.
//!
//! Ships a deterministic token-hash embedder so the whole engine runs and
//! tests offline; a remote HTTP provider can be swapped in behind the same
//! trait.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{fnv1a64, tokenize};

/// Environment variable holding the API key for the remote embedder.
pub const EMBED_KEY_ENV: &str = "FADEMEM_EMBED_KEY";

/// Default embedding dimension for the deterministic provider.
pub const DEFAULT_DIMENSION: usize = 256;

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("text has no embeddable tokens")]
    EmptyText,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("embedding contains a non-finite entry")]
    NonFinite,
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("remote embedding failed: {0}")]
    Remote(String),
}

impl Embedding {
    /// Normalizes `values` to unit Euclidean norm.
    pub fn normalized(values: Vec<f32>) -> Result<Embedding, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Embedding(
            values.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        ))
    }

    /// Wraps raw values without normalizing; the snapshot codec uses this to
    /// round-trip stored vectors bit-exactly and validates the norm itself.
    pub(crate) fn from_raw(values: Vec<f32>) -> Embedding {
        Embedding(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two unit vectors (their dot product), in [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    Ok(dot(a, b))
}

/// Dot product with f64 accumulation; callers guarantee equal dimensions.
pub(crate) fn dot(a: &Embedding, b: &Embedding) -> f64 {
    debug_assert_eq!(a.dimension(), b.dimension());
    a.0.iter()
        .zip(&b.0)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

/// Capability interface for text embedding. Implementations must be safe to
/// call from multiple threads.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
    fn dimension(&self) -> usize;
}

/// Deterministic offline embedder: token-hash bag of features.
///
/// Tokens are lowercased alphanumeric runs; each token is hashed with 64-bit
/// FNV-1a into one of `dimension` buckets, the bucket is incremented, and the
/// vector is l2-normalized. Stateless, so the same text always yields the
/// same vector on any platform.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashEmbedder { dimension }
    }

    /// Bucket a single token lands in.
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut counts = vec![0.0f32; self.dimension];
        for token in &tokens {
            counts[self.bucket(token)] += 1.0;
        }
        Embedding::normalized(counts)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Remote embedding provider: POSTs `{"input": text}` to a configured
/// endpoint and normalizes the returned vector on receipt.
pub struct RemoteEmbedder {
    endpoint: String,
    api_key: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct RemoteEmbeddingReply {
    #[serde(default)]
    embedding: Option<Vec<f32>>,
    #[serde(default)]
    data: Vec<RemoteEmbeddingItem>,
}

#[derive(Deserialize)]
struct RemoteEmbeddingItem {
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    /// Reads the API key from `FADEMEM_EMBED_KEY`.
    pub fn new(endpoint: String, dimension: usize) -> Result<RemoteEmbedder, EmbedError> {
        let api_key =
            std::env::var(EMBED_KEY_ENV).map_err(|_| EmbedError::MissingEnv(EMBED_KEY_ENV))?;
        Ok(RemoteEmbedder {
            endpoint,
            api_key,
            dimension,
            client: reqwest::blocking::Client::new(),
        })
    }

    /// Pulls the vector out of a reply body; accepts both a bare
    /// `{"embedding": [...]}` and the `{"data": [{"embedding": [...]}]}`
    /// shape used by hosted embedding services.
    pub fn parse_reply(body: &str) -> Result<Vec<f32>, EmbedError> {
        let reply: RemoteEmbeddingReply =
            serde_json::from_str(body).map_err(|e| EmbedError::Remote(e.to_string()))?;
        if let Some(values) = reply.embedding {
            return Ok(values);
        }
        reply
            .data
            .into_iter()
            .next()
            .map(|item| item.embedding)
            .ok_or_else(|| EmbedError::Remote("reply carries no embedding".to_string()))
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&serde_json::json!({ "input": text }))
            .send()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        if !response.status().is_success() {
            return Err(EmbedError::Remote(format!("status {}", response.status())));
        }
        let body = response.text().map_err(|e| EmbedError::Remote(e.to_string()))?;
        let values = Self::parse_reply(&body)?;
        if values.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch(self.dimension, values.len()));
        }
        Embedding::normalized(values)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
