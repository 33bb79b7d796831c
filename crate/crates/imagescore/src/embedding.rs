//! Frozen embedding supply: file-backed stores, a remote inference client,
//! and antonym-prompt zero-shot attribute scores.
//!
//! Embeddings are consumed, never produced here. The backbone lives behind
//! a precomputed JSONL file or a remote endpoint speaking plain JSON over
//! HTTP (`POST {"keys": [...]}` → `{"dim": n, "vectors": [[...]]}`).

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::logistic;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed embedding record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {found} ({context})")]
    DimMismatch {
        expected: usize,
        found: usize,
        context: String,
    },
    #[error("non-finite value in vector for key {key}")]
    CorruptVector { key: String },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("remote endpoint unavailable after {attempts} attempts: {last_error}")]
    RemoteUnavailable { attempts: u32, last_error: String },
    #[error("remote response missing key {key}")]
    MissingKey { key: String },
    #[error("no embedding stored for key {key}")]
    Unknown { key: String },
}

/// Where a store's vectors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreSource {
    File,
    Remote,
    Synthetic,
}

/// In-memory map from key to fixed-dimension vector. All vectors share one
/// dimension; values are always finite.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub source: StoreSource,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    key: String,
    vector: Vec<serde_json::Value>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, source: StoreSource) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.vectors.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Result<&[f64], EmbeddingError> {
        self.vectors
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbeddingError::Unknown {
                key: key.to_string(),
            })
    }

    /// Insert a vector, validating dimension and finiteness.
    pub fn insert(&mut self, key: String, values: Vec<f64>) -> Result<(), EmbeddingError> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                found: values.len(),
                context: format!("key {key}"),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::CorruptVector { key });
        }
        self.vectors.insert(key, values);
        Ok(())
    }

    /// Load a store from embedding JSONL: `{"key": str, "vector": [f, ...]}`
    /// per line. The first record fixes the dimension.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut store: Option<EmbeddingStore> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: EmbeddingLine =
                serde_json::from_str(&line).map_err(|e| EmbeddingError::Malformed {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            let mut values = Vec::with_capacity(parsed.vector.len());
            for v in &parsed.vector {
                match v.as_f64() {
                    Some(f) if f.is_finite() => values.push(f),
                    // Numbers that don't fit f64 finitely, or junk like the
                    // string "NaN", both mean a corrupt vector.
                    _ => {
                        return Err(EmbeddingError::CorruptVector {
                            key: parsed.key.clone(),
                        })
                    }
                }
            }
            let store = store.get_or_insert_with(|| {
                EmbeddingStore::new(values.len(), StoreSource::File)
            });
            store.insert(parsed.key, values)?;
        }
        Ok(store.unwrap_or_else(|| EmbeddingStore::new(0, StoreSource::File)))
    }

    /// Write the store as embedding JSONL, keys sorted for stable output.
    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for key in keys {
            let rec = serde_json::json!({"key": key, "vector": &self.vectors[key]});
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }

    /// Fetch vectors for `keys` from a remote endpoint and merge them into
    /// this store's cache. Returns the vectors in key order.
    pub fn fetch_remote(
        &mut self,
        keys: &[String],
        cfg: &RemoteConfig,
    ) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let client = RemoteClient::new(cfg.clone());
        let vectors = client.fetch(keys, self.dim)?;
        if self.dim == 0 {
            if let Some(first) = vectors.first() {
                self.dim = first.len();
            }
        }
        for (key, values) in keys.iter().zip(&vectors) {
            self.insert(key.clone(), values.clone())?;
        }
        self.source = StoreSource::Remote;
        Ok(vectors)
    }
}

/// Remote embedding endpoint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Upper bound on concurrent requests; fetches here are sequential, so
    /// this only caps future parallel callers.
    pub max_in_flight: u32,
    /// Base backoff, doubled per retry.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8800/embed".to_string(),
            timeout_ms: 5_000,
            max_retries: 3,
            max_in_flight: 4,
            backoff_ms: 50,
        }
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    keys: &'a [String],
}

#[derive(Deserialize)]
struct RemoteResponse {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
}

/// JSON-over-HTTP client for the embedding endpoint, with exponential
/// backoff on transport failures.
pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Self { cfg, agent }
    }

    /// POST the key list, expecting one vector per key in request order.
    /// `expected_dim` of 0 accepts whatever the server reports.
    pub fn fetch(&self, keys: &[String], expected_dim: usize) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let attempts = self.cfg.max_retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.cfg.backoff_ms << (attempt - 1).min(8),
                ));
            }
            match self.try_fetch(keys) {
                Ok(resp) => return self.validate(keys, resp, expected_dim),
                Err(e) => last_error = e,
            }
        }
        Err(EmbeddingError::RemoteUnavailable {
            attempts,
            last_error,
        })
    }

    fn try_fetch(&self, keys: &[String]) -> Result<RemoteResponse, String> {
        self.agent
            .post(&self.cfg.endpoint)
            .send_json(&RemoteRequest { keys })
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_json::<RemoteResponse>()
            .map_err(|e| e.to_string())
    }

    fn validate(
        &self,
        keys: &[String],
        resp: RemoteResponse,
        expected_dim: usize,
    ) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if expected_dim != 0 && resp.dim != expected_dim {
            return Err(EmbeddingError::DimMismatch {
                expected: expected_dim,
                found: resp.dim,
                context: "remote response header".to_string(),
            });
        }
        if resp.vectors.len() > keys.len() {
            return Err(EmbeddingError::Malformed {
                line: 0,
                reason: format!(
                    "remote returned {} vectors for {} keys",
                    resp.vectors.len(),
                    keys.len()
                ),
            });
        }
        let mut out = Vec::with_capacity(keys.len());
        for (i, key) in keys.iter().enumerate() {
            let v = resp
                .vectors
                .get(i)
                .and_then(|v| v.as_ref())
                .ok_or_else(|| EmbeddingError::MissingKey { key: key.clone() })?;
            if v.len() != resp.dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: resp.dim,
                    found: v.len(),
                    context: format!("remote vector for key {key}"),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::CorruptVector { key: key.clone() });
            }
            out.push(v.clone());
        }
        Ok(out)
    }
}

/// Cosine similarity of two same-dimension, nonzero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimMismatch {
            expected: a.len(),
            found: b.len(),
            context: "cosine arguments".to_string(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Zero-shot attribute score from a pair of antonym prompts.
///
/// Softmax over `(cos(img, pos)/t, cos(img, neg)/t)`, first component:
/// 1.0 means the image matches the positive prompt, 0.5 means indifferent.
pub fn antonym_attribute_score(
    img: &[f64],
    pos_prompt: &[f64],
    neg_prompt: &[f64],
    temperature: f64,
) -> Result<f64, EmbeddingError> {
    let cp = cosine_similarity(img, pos_prompt)?;
    let cn = cosine_similarity(img, neg_prompt)?;
    Ok(logistic((cp - cn) / temperature))
}
