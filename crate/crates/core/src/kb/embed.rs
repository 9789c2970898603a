use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::http::{self, Attempt, RetryPolicy};

pub const DEFAULT_DIM: usize = 1536;
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, thiserror::Error)]
pub enum EmbedError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("embedding service returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("expected {expected} embeddings, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("expected dimension {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("non-finite embedding value")]
    NonFinite,
}

/// A fixed-length vector of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(EmbedError::NonFinite)
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity; zero vectors are dissimilar to everything.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
        for (a, b) in self.0.iter().zip(&other.0) {
            let (a, b) = (f64::from(*a), f64::from(*b));
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub trait EmbeddingClient: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per input text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop().ok_or(EmbedError::CountMismatch { expected: 1, actual: 0 })
    }
}

/// Deterministic offline embedder: character trigrams of the case-folded,
/// whitespace-collapsed text hashed into `dim` buckets, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    exec: Execution,
}

impl HashingEmbedder {
    const GRAM: usize = 3;

    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let normalized: Vec<char> = text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
            .chars()
            .collect();
        let mut buckets = vec![0f32; self.dim];
        if !normalized.is_empty() {
            let gram = Self::GRAM.min(normalized.len());
            let mut buf = String::new();
            for window in normalized.windows(gram) {
                buf.clear();
                buf.extend(window);
                buckets[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            buckets.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector(buckets)
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl EmbeddingClient for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(self.exec.map(texts, |t| self.embed_one(t)))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Client for an OpenAI-style `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    retry: RetryPolicy,
    client: http::LazyClient,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
    index: Option<usize>,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key,
            dim: DEFAULT_DIM,
            retry: RetryPolicy::default(),
            client: http::LazyClient::new(Duration::from_secs(60)),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn call(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = EmbedRequest {
            model: &self.model,
            input: batch,
        };
        let mut data = self.retry.run(|_| {
            let mut request = self.client.get().post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let response = request.send().map_err(|e| {
                let err = EmbedError::Transport(e.to_string());
                if http::is_transient_error(&e) {
                    Attempt::Transient(err)
                } else {
                    Attempt::Fatal(err)
                }
            })?;
            let status = response.status();
            if !status.is_success() {
                let err = EmbedError::Status {
                    status: status.as_u16(),
                    body: response.text().unwrap_or_default(),
                };
                return Err(if http::is_transient_status(status) {
                    Attempt::Transient(err)
                } else {
                    Attempt::Fatal(err)
                });
            }
            response
                .json::<EmbedResponse>()
                .map(|r| r.data)
                .map_err(|e| Attempt::Fatal(EmbedError::Malformed(e.to_string())))
        })?;
        if data.len() != batch.len() {
            return Err(EmbedError::CountMismatch {
                expected: batch.len(),
                actual: data.len(),
            });
        }
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        actual: d.embedding.len(),
                    });
                }
                EmbeddingVector::new(d.embedding)
            })
            .collect()
    }
}

impl EmbeddingClient for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(MAX_BATCH) {
            out.extend(self.call(batch)?);
        }
        Ok(out)
    }
}
