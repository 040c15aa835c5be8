//! Text embedders used for neighbor-fact selection.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

/// Texts per request to a remote embedding service.
pub const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("embedding for {text:?} is not finite")]
    NonFinite { text: String },
}

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Deterministic bag-of-token-hashes embedder.
///
/// Each lowercase alphanumeric token adds ±1 to a bucket picked by its hash.
/// Texts without any token fall back to hashing the whole string, so no output
/// is the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    name: String,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            name: format!("hash-bow-{dim}"),
            dim,
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(&lower);
        }
        for tok in tokens {
            let d = Sha256::digest(tok.as_bytes());
            let bucket = u64::from_le_bytes(d[..8].try_into().unwrap()) as usize % self.dim;
            let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            // Every token cancelled out; keep the vector non-zero.
            v[0] = 1.0;
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RemoteEmbedderConfig {
    /// Full URL of the embeddings endpoint, e.g. `http://host:8080/v1/embeddings`.
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_retries() -> usize {
    3
}

fn default_timeout() -> u64 {
    60
}

/// Client for an embeddings service.
///
/// Request: `{"model": "...", "input": ["text", ...]}`. The response may be
/// either `{"data": [{"index": i, "embedding": [...]}, ...]}` or
/// `{"embeddings": [[...], ...]}`.
pub struct RemoteEmbedder {
    cfg: RemoteEmbedderConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct DataItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    #[serde(default)]
    data: Option<Vec<DataItem>>,
    #[serde(default)]
    embeddings: Option<Vec<Vec<f32>>>,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteEmbedderConfig) -> Result<Self, EmbedError> {
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| EmbedError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { cfg, api_key, http })
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let body = json!({ "model": self.cfg.model, "input": texts });
        let attempts = self.cfg.max_retries.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            let mut req = self.http.post(&self.cfg.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => {
                    let parsed: EmbedResponse = resp
                        .json()
                        .map_err(|e| EmbedError::Malformed(e.to_string()))?;
                    return parse_vectors(parsed, texts);
                }
                Err(e) => {
                    last = e.to_string();
                    warn!(attempt, error = %last, "embedding request failed");
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(200 * attempt as u64));
                    }
                }
            }
        }
        Err(EmbedError::Transport {
            attempts,
            message: last,
        })
    }
}

fn parse_vectors(resp: EmbedResponse, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
    let vectors = match (resp.data, resp.embeddings) {
        (Some(mut data), _) => {
            if data.iter().all(|d| d.index.is_some()) {
                data.sort_by_key(|d| d.index);
            }
            data.into_iter().map(|d| d.embedding).collect()
        }
        (None, Some(e)) => e,
        (None, None) => return Err(EmbedError::Malformed("no `data` or `embeddings` field".into())),
    };
    if vectors.len() != texts.len() {
        return Err(EmbedError::Malformed(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    for (v, t) in vectors.iter().zip(texts) {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite { text: t.clone() });
        }
    }
    Ok(vectors)
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.cfg.model
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(EMBED_BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

/// Memoizes another embedder, keyed by (model name, exact text).
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    cache: RwLock<HashMap<(String, String), Arc<Vec<f32>>>>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.read().len()
    }
}

impl Embedder for CachedEmbedder {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let model = self.inner.name().to_string();
        let mut missing: Vec<String> = {
            let cache = self.cache.read();
            texts
                .iter()
                .filter(|t| !cache.contains_key(&(model.clone(), (*t).clone())))
                .cloned()
                .collect()
        };
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            let mut cache = self.cache.write();
            for (t, v) in missing.into_iter().zip(fresh) {
                cache.insert((model.clone(), t), Arc::new(v));
            }
        }
        let cache = self.cache.read();
        Ok(texts
            .iter()
            .map(|t| cache[&(model.clone(), t.clone())].as_ref().clone())
            .collect())
    }
}
