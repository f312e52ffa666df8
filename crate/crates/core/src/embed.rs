//! Unit-normalized text embeddings and the providers that produce them.
//!
//! Every vector leaving this module has unit L2 norm, so similarity search
//! downstream is a plain dot product. Two providers ship here: a
//! deterministic feature-hashing embedder used for offline builds and tests,
//! and an HTTP client for an embeddings endpoint (`POST {base}/embeddings`
//! with `{model, input}`).

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding dimension {0} is too small (minimum 8)")]
    InvalidDimension(usize),
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider rejected input {index}: {reason}")]
    ProviderRejectedInput { index: usize, reason: String },
}

/// A unit-length vector of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// L2-normalizes `values`. A zero (or non-finite) vector becomes `e0`.
    ///
    /// Panics if `values` is empty.
    pub fn normalized(values: Vec<f32>) -> Self {
        assert!(!values.is_empty(), "embedding must have at least one dimension");
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Self::basis(values.len());
        }
        let values = values
            .into_iter()
            .map(|v| (f64::from(v) / norm) as f32)
            .collect();
        Self { values }
    }

    fn from_f64(acc: Vec<f64>) -> Self {
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Self::basis(acc.len());
        }
        Self {
            values: acc.into_iter().map(|v| (v / norm) as f32).collect(),
        }
    }

    /// Wraps values that are already normalized (e.g. read back from an
    /// artifact) without touching a single bit.
    pub fn from_normalized(values: Vec<f32>) -> Self {
        Self { values }
    }

    /// The unit basis vector `e0` of the given dimension.
    pub fn basis(dim: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[0] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Dot product accumulated in `f64`, in index order, reported as `f32`.
///
/// The fixed summation order makes `dot(a, b) == dot(b, a)` bit for bit.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc as f32
}

/// Cosine similarity of two normalized embeddings.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f32, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(dot(&a.values, &b.values))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Part of the hash-embedder format; do not swap it out.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Feature-hashes the character trigrams of the lowercased text into `dim`
/// signed buckets and normalizes the result.
///
/// Texts shorter than three characters contribute themselves as a single
/// feature; the empty text maps to `e0`.
///
/// Panics if `dim < 8`.
pub fn hash_embed(text: &str, dim: usize) -> Embedding {
    assert!(dim >= 8, "hash embedding dimension must be at least 8");
    let lowered: Vec<char> = text.to_lowercase().chars().collect();
    let mut acc = vec![0.0f64; dim];
    let mut add = |feature: &[char]| {
        let s: String = feature.iter().collect();
        let h = fnv1a64(s.as_bytes());
        let bucket = (h % dim as u64) as usize;
        acc[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    };
    if lowered.len() >= 3 {
        for tri in lowered.windows(3) {
            add(tri);
        }
    } else if !lowered.is_empty() {
        add(&lowered);
    }
    Embedding::from_f64(acc)
}

/// Something that turns text into normalized vectors of a fixed dimension.
#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Embeds `texts` in order. Callers go through [`embed_batch`], which
    /// checks preconditions first.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError>;
}

/// Embeds a batch, rejecting empty strings before the provider sees them.
pub async fn embed_batch(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<Embedding>, EmbedError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(index) = texts.iter().position(|t| t.is_empty()) {
        return Err(EmbedError::ProviderRejectedInput {
            index,
            reason: "empty text".into(),
        });
    }
    let out = provider.embed(texts).await?;
    if out.len() != texts.len() {
        return Err(EmbedError::ProviderUnavailable(format!(
            "provider returned {} vectors for {} inputs",
            out.len(),
            texts.len()
        )));
    }
    if let Some(bad) = out.iter().find(|e| e.dim() != provider.dim()) {
        return Err(EmbedError::DimensionMismatch {
            expected: provider.dim(),
            found: bad.dim(),
        });
    }
    Ok(out)
}

/// Deterministic offline embedder backed by [`hash_embed`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    name: String,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 8 {
            return Err(EmbedError::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            name: format!("hash-trigram-{dim}"),
        })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM).expect("default dimension is valid")
    }
}

#[async_trait]
impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| hash_embed(t, self.dim)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub dim: usize,
    pub batch_size: usize,
    /// Total attempts per batch, including the first one.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    pub request_timeout: Duration,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "text-embedding-3-small".into(),
            dim: 1536,
            batch_size: 64,
            max_attempts: 3,
            backoff_base: Duration::from_millis(200),
            max_in_flight: 4,
            request_timeout: Duration::from_secs(30),
        }
    }
}

impl RemoteEmbedderConfig {
    /// Reads `AGENTKIT_EMBED_BASE_URL`, `AGENTKIT_EMBED_API_KEY`,
    /// `AGENTKIT_EMBED_MODEL` and `AGENTKIT_EMBED_DIM` over the defaults.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("AGENTKIT_EMBED_BASE_URL") {
            cfg.base_url = v;
        }
        if let Ok(v) = std::env::var("AGENTKIT_EMBED_API_KEY") {
            cfg.api_key = Some(v);
        }
        if let Ok(v) = std::env::var("AGENTKIT_EMBED_MODEL") {
            cfg.model = v;
        }
        if let Some(dim) = std::env::var("AGENTKIT_EMBED_DIM").ok().and_then(|v| v.parse().ok()) {
            cfg.dim = dim;
        }
        cfg
    }
}

/// Client for an OpenAI-style embeddings endpoint.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: reqwest::Client,
    in_flight: Arc<Semaphore>,
    name: String,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

enum Attempt {
    Transient(String),
    Rejected(String),
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbedError> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            in_flight: Arc::new(Semaphore::new(config.max_in_flight.max(1))),
            name: format!("remote:{}", config.model),
            client,
            config,
        })
    }

    async fn post_once(&self, batch: &[String]) -> Result<Vec<Embedding>, Attempt> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&serde_json::json!({
            "model": self.config.model,
            "input": batch,
        }));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(Attempt::Rejected(format!("HTTP {status}: {body}")));
        }
        let mut parsed: EmbeddingsResponse = resp
            .json()
            .await
            .map_err(|e| Attempt::Transient(format!("bad response body: {e}")))?;
        parsed.data.sort_by_key(|d| d.index.unwrap_or(0));
        Ok(parsed
            .data
            .into_iter()
            .map(|d| Embedding::normalized(d.embedding))
            .collect())
    }

    async fn post_with_retry(&self, start: usize, batch: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                tokio::time::sleep(self.config.backoff_base * 2u32.pow(attempt - 1)).await;
            }
            match self.post_once(batch).await {
                Ok(v) => return Ok(v),
                Err(Attempt::Rejected(reason)) => {
                    return Err(EmbedError::ProviderRejectedInput { index: start, reason })
                }
                Err(Attempt::Transient(reason)) => {
                    tracing::warn!(attempt, %reason, "embedding request failed");
                    last = reason;
                }
            }
        }
        Err(EmbedError::ProviderUnavailable(format!(
            "{attempts} attempts failed, last error: {last}"
        )))
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let size = self.config.batch_size.max(1);
        let requests: Vec<_> = texts
            .chunks(size)
            .enumerate()
            .map(|(i, batch)| self.post_with_retry(i * size, batch))
            .collect();
        let batches: Vec<Vec<Embedding>> = stream::iter(requests)
            .buffered(self.config.max_in_flight.max(1))
            .try_collect()
            .await?;
        Ok(batches.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let a = Embedding::normalized(vec![1.0, 0.0]);
        let b = Embedding::normalized(vec![0.0, 1.0]);
        let c = Embedding::normalized(vec![1.0, 1.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-6);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        assert!((cosine_similarity(&a, &c).unwrap() - 0.707_106_78).abs() <= 1e-6);
    }

    #[test]
    fn cosine_rejects_mismatched_dims() {
        let a = Embedding::basis(2);
        let b = Embedding::basis(3);
        assert_eq!(
            cosine_similarity(&a, &b),
            Err(EmbedError::DimensionMismatch { expected: 2, found: 3 })
        );
    }

    #[test]
    fn zero_vector_maps_to_e0() {
        let e = Embedding::normalized(vec![0.0; 5]);
        assert_eq!(e.values(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(hash_embed("", 16), Embedding::basis(16));
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        let a = hash_embed("Cell segmentation with Cellpose", 64);
        let b = hash_embed("Cell segmentation with Cellpose", 64);
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!((a.norm() - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn hash_embed_is_case_insensitive() {
        assert_eq!(hash_embed("DeepImageJ", 32), hash_embed("deepimagej", 32));
    }

    #[test]
    fn short_text_is_one_feature() {
        let e = hash_embed("ab", 8);
        let nonzero = e.values().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    #[should_panic]
    fn hash_embed_rejects_tiny_dim() {
        hash_embed("x", 4);
    }

    #[tokio::test]
    async fn batch_preserves_order_and_rejects_empty() {
        let p = HashEmbedder::new(32).unwrap();
        let texts: Vec<String> = vec!["one".into(), "two".into(), "three".into()];
        let out = embed_batch(&p, &texts).await.unwrap();
        assert_eq!(out.len(), 3);
        for (t, e) in texts.iter().zip(&out) {
            assert_eq!(*e, hash_embed(t, 32));
        }
        assert!(embed_batch(&p, &[]).await.unwrap().is_empty());
        let err = embed_batch(&p, &["a".into(), String::new()]).await.unwrap_err();
        assert!(matches!(err, EmbedError::ProviderRejectedInput { index: 1, .. }));
    }
}
