//! LLM annotation of candidate batches: prompt rendering, score parsing,
//! per-SERP normalization, adjective extraction, and a content-addressed
//! cache so annotation runs are repeatable and labelers swappable.

mod backend;
mod cache;
mod parse;

pub use backend::{HttpLlmConfig, LabelerBackend, MockOracleConfig};
pub use cache::AnnotationCache;
pub use parse::{parse_response, parse_scores};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::CandidateBatch;

/// Default prompt template; override with a template file per run.
pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../../assets/prompt_template.txt");

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("template is missing required placeholder {placeholder}")]
    Template { placeholder: &'static str },
    #[error("could not parse scores: found {found}, expected {expected}")]
    Parse {
        found: usize,
        expected: usize,
        raw: String,
    },
    #[error("labeler endpoint unavailable after {attempts} attempts: {last_error}")]
    RemoteUnavailable { attempts: u32, last_error: String },
    #[error("cache-only backend has no entry for this batch (key {key})")]
    CacheMiss { key: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed cache line {line}: {reason}")]
    CorruptCache { line: usize, reason: String },
}

/// Sentiment polarity of a lexicon adjective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

/// Adjective → sentiment map used for analysis-text mining.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon(pub BTreeMap<String, Sentiment>);

impl Lexicon {
    /// Built-in lexicon covering the adjectives the mock oracle emits plus
    /// common photo-quality vocabulary.
    pub fn default_lexicon() -> Self {
        let mut map = BTreeMap::new();
        for adj in [
            "clear", "bright", "sharp", "vibrant", "clean", "appealing", "crisp", "well-lit",
            "detailed", "balanced",
        ] {
            map.insert(adj.to_string(), Sentiment::Positive);
        }
        for adj in [
            "blurry", "dark", "dim", "cluttered", "noisy", "washed-out", "grainy", "overexposed",
            "underexposed", "distracting",
        ] {
            map.insert(adj.to_string(), Sentiment::Negative);
        }
        for adj in ["plain", "simple", "basic", "ordinary", "average"] {
            map.insert(adj.to_string(), Sentiment::Neutral);
        }
        Lexicon(map)
    }

    /// Load from JSON: `{"adjective": "positive|negative|neutral", ...}`.
    pub fn load(path: &Path) -> Result<Self, AnnotateError> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, Sentiment> =
            serde_json::from_str(&text).map_err(|e| AnnotateError::CorruptCache {
                line: 0,
                reason: format!("lexicon: {e}"),
            })?;
        Ok(Lexicon(map))
    }

    pub fn get(&self, adjective: &str) -> Option<Sentiment> {
        self.0.get(adjective).copied()
    }
}

/// One item's label: the raw 0-10 LLM score, the per-SERP min-max
/// normalized score, and the analysis text with its lexicon hits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityAnnotation {
    pub item_id: String,
    pub raw_score: f64,
    pub norm_score: f64,
    pub analysis_text: String,
    pub adjectives: Vec<String>,
}

/// A candidate batch plus one annotation per item, in item order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBatch {
    pub batch: CandidateBatch,
    pub annotations: Vec<QualityAnnotation>,
    pub labeler_id: String,
    pub prompt_hash: String,
}

/// Render the prompt for one batch. `{en_query}` is substituted with the
/// batch query and `{images}` with one `Image k: <image_ref>` line per item,
/// in batch order.
pub fn render_prompt(batch: &CandidateBatch, template: &str) -> Result<String, AnnotateError> {
    if !template.contains("{en_query}") {
        return Err(AnnotateError::Template {
            placeholder: "{en_query}",
        });
    }
    if !template.contains("{images}") {
        return Err(AnnotateError::Template {
            placeholder: "{images}",
        });
    }
    let mut images = String::new();
    for (i, item) in batch.items.iter().enumerate() {
        images.push_str(&format!("Image {}: {}\n", i + 1, item.image_ref));
    }
    Ok(template
        .replace("{en_query}", &batch.en_query)
        .replace("{images}", images.trim_end()))
}

/// Per-SERP min-max normalization to [0, 1]; an all-equal batch maps to 0.5.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|r| (r - min) / (max - min)).collect()
}

/// Lexicon hits in order of first occurrence, deduplicated.
///
/// Tokens are lowercased and split on everything except letters, digits and
/// internal hyphens, so "well-lit" survives tokenization.
pub fn extract_adjectives(analysis_text: &str, lexicon: &Lexicon) -> Vec<(String, Sentiment)> {
    let lower = analysis_text.to_lowercase();
    let mut seen = Vec::new();
    for token in lower.split(|c: char| !(c.is_alphanumeric() || c == '-')) {
        let token = token.trim_matches('-');
        if token.is_empty() {
            continue;
        }
        if let Some(s) = lexicon.get(token) {
            if !seen.iter().any(|(t, _)| t == token) {
                seen.push((token.to_string(), s));
            }
        }
    }
    seen
}

fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Content address for one batch annotation: prompt hash plus item ids.
pub fn cache_key(prompt_hash: &str, item_ids: &[&str]) -> String {
    sha256_hex(&format!("{prompt_hash}\u{0}{}", item_ids.join("\u{1}")))
}

/// Orchestrates annotation: template, backend, lexicon, cache, call
/// counting.
pub struct Annotator {
    pub backend: LabelerBackend,
    pub template: String,
    pub lexicon: Lexicon,
    pub cache: AnnotationCache,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl Annotator {
    pub fn new(backend: LabelerBackend, template: String, lexicon: Lexicon, cache: AnnotationCache) -> Self {
        Self {
            backend,
            template,
            lexicon,
            cache,
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    /// Number of times the backend was actually invoked (cache misses).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// Annotate one batch, going to the backend only on cache miss.
    pub fn annotate(&mut self, batch: &CandidateBatch) -> Result<AnnotatedBatch, AnnotateError> {
        let prompt = render_prompt(batch, &self.template)?;
        let prompt_hash = sha256_hex(&prompt);
        let ids: Vec<&str> = batch.items.iter().map(|i| i.item_id.as_str()).collect();
        let key = cache_key(&prompt_hash, &ids);
        if let Some(hit) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        let response = match &self.backend {
            LabelerBackend::CacheOnly => return Err(AnnotateError::CacheMiss { key }),
            other => {
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                other.complete(&prompt, batch)?
            }
        };
        let parsed = parse_response(&response, batch.items.len())?;
        let raw: Vec<f64> = parsed.iter().map(|(s, _)| *s).collect();
        let norm = normalize_scores(&raw);
        let annotations: Vec<QualityAnnotation> = batch
            .items
            .iter()
            .zip(parsed)
            .zip(norm)
            .map(|((item, (raw_score, analysis_text)), norm_score)| {
                let adjectives = extract_adjectives(&analysis_text, &self.lexicon)
                    .into_iter()
                    .map(|(a, _)| a)
                    .collect();
                QualityAnnotation {
                    item_id: item.item_id.clone(),
                    raw_score,
                    norm_score,
                    analysis_text,
                    adjectives,
                }
            })
            .collect();
        let annotated = AnnotatedBatch {
            batch: batch.clone(),
            annotations,
            labeler_id: self.backend.labeler_id(),
            prompt_hash,
        };
        self.cache.put(key, annotated.clone())?;
        Ok(annotated)
    }
}

/// Read annotated batches from JSONL (same format as the cache file).
pub fn read_annotated_jsonl(path: &Path) -> Result<Vec<AnnotatedBatch>, AnnotateError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let batch: AnnotatedBatch =
            serde_json::from_str(line).map_err(|e| AnnotateError::CorruptCache {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        out.push(batch);
    }
    Ok(out)
}

/// Write annotated batches as JSONL.
pub fn write_annotated_jsonl(path: &Path, batches: &[AnnotatedBatch]) -> Result<(), AnnotateError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for b in batches {
        writeln!(out, "{}", serde_json::to_string(b).expect("serializable"))?;
    }
    Ok(())
}
