//! Labeler backends: a JSON-over-HTTP LLM endpoint, a deterministic mock
//! oracle for tests and synthetic runs, and a cache-only mode.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AnnotateError;
use crate::ingest::CandidateBatch;
use crate::util::{derive_seed, fnv1a64};

/// Env var holding the LLM API key; sent as a bearer token when set.
pub const LLM_KEY_ENV: &str = "IMAGESCORE_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Upper bound on concurrent requests (sequential callers ignore it).
    pub max_in_flight: u32,
    /// Simple rate limit; 0 disables.
    pub requests_per_minute: u32,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8900/v1/score".to_string(),
            model: "gpt-4-vision".to_string(),
            timeout_ms: 30_000,
            max_retries: 3,
            max_in_flight: 2,
            requests_per_minute: 0,
        }
    }
}

/// Deterministic stand-in labeler. Scores come from a ground-truth quality
/// table when provided (plus seeded Gaussian noise), otherwise from a hash
/// of the item id, so the same (seed, batch) always yields the same
/// transcript.
#[derive(Debug, Clone, Default)]
pub struct MockOracleConfig {
    pub seed: u64,
    pub noise_sigma: f64,
    /// item_id → true quality in [0, 1].
    pub truth: Option<HashMap<String, f64>>,
}

pub enum LabelerBackend {
    HttpLlm(HttpLlmClient),
    MockOracle(MockOracleConfig),
    CacheOnly,
}

impl LabelerBackend {
    pub fn http(cfg: HttpLlmConfig) -> Self {
        LabelerBackend::HttpLlm(HttpLlmClient::new(cfg))
    }

    pub fn labeler_id(&self) -> String {
        match self {
            LabelerBackend::HttpLlm(c) => format!("http:{}", c.cfg.model),
            LabelerBackend::MockOracle(c) => format!("mock-oracle:{}", c.seed),
            LabelerBackend::CacheOnly => "cache-only".to_string(),
        }
    }

    /// Produce the raw response transcript for one prompt.
    pub fn complete(&self, prompt: &str, batch: &CandidateBatch) -> Result<String, AnnotateError> {
        match self {
            LabelerBackend::HttpLlm(client) => client.complete(prompt, batch),
            LabelerBackend::MockOracle(cfg) => Ok(mock_transcript(cfg, batch)),
            LabelerBackend::CacheOnly => unreachable!("cache-only handled by Annotator"),
        }
    }
}

const POSITIVE_ADJ: &[&str] = &["clear", "bright", "sharp", "vibrant", "clean", "appealing"];
const NEGATIVE_ADJ: &[&str] = &["blurry", "dark", "dim", "cluttered", "noisy", "grainy"];
const NEUTRAL_ADJ: &[&str] = &["plain", "simple", "basic"];

/// Quality in [0, 1] for an item: ground truth when known, otherwise a
/// uniform hash of (seed, item_id).
fn mock_quality(cfg: &MockOracleConfig, item_id: &str) -> f64 {
    if let Some(truth) = &cfg.truth {
        if let Some(q) = truth.get(item_id) {
            return *q;
        }
    }
    let h = fnv1a64(format!("{}:{item_id}", cfg.seed).as_bytes());
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Raw 0-10 score: `clip(10·q + noise, 0, 10)` with per-item seeded noise.
pub fn mock_raw_score(cfg: &MockOracleConfig, item_id: &str) -> f64 {
    let q = mock_quality(cfg, item_id);
    let noise = if cfg.noise_sigma > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, item_id));
        Normal::new(0.0, cfg.noise_sigma)
            .expect("sigma > 0")
            .sample(&mut rng)
    } else {
        0.0
    };
    (10.0 * q + noise).clamp(0.0, 10.0)
}

/// Render a response transcript in the exact grammar `parse_response`
/// accepts, with adjectives picked by quality tercile.
fn mock_transcript(cfg: &MockOracleConfig, batch: &CandidateBatch) -> String {
    let mut text = String::new();
    for (i, item) in batch.items.iter().enumerate() {
        let q = mock_quality(cfg, &item.item_id);
        let raw = mock_raw_score(cfg, &item.item_id);
        let pool: &[&str] = if q > 0.66 {
            POSITIVE_ADJ
        } else if q < 0.33 {
            NEGATIVE_ADJ
        } else {
            NEUTRAL_ADJ
        };
        let h = fnv1a64(item.item_id.as_bytes()) as usize;
        let a1 = pool[h % pool.len()];
        let a2 = pool[(h / pool.len()) % pool.len()];
        text.push_str(&format!(
            "Image {}: The listing photo looks {a1} and {a2}. Score: {raw}/10\n",
            i + 1
        ));
    }
    text
}

#[derive(Serialize)]
struct LlmRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    image_refs: Vec<&'a str>,
}

#[derive(Deserialize)]
struct LlmResponse {
    text: String,
}

/// Blocking HTTP client with retry/backoff and a coarse requests-per-minute
/// limiter.
pub struct HttpLlmClient {
    cfg: HttpLlmConfig,
    agent: ureq::Agent,
    last_request: std::sync::Mutex<Option<Instant>>,
}

impl HttpLlmClient {
    pub fn new(cfg: HttpLlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Self {
            cfg,
            agent,
            last_request: std::sync::Mutex::new(None),
        }
    }

    fn throttle(&self) {
        if self.cfg.requests_per_minute == 0 {
            return;
        }
        let min_gap = Duration::from_millis(60_000 / u64::from(self.cfg.requests_per_minute));
        let mut last = self.last_request.lock().expect("limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min_gap {
                std::thread::sleep(min_gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn complete(&self, prompt: &str, batch: &CandidateBatch) -> Result<String, AnnotateError> {
        let image_refs: Vec<&str> = batch.items.iter().map(|i| i.image_ref.as_str()).collect();
        let body = LlmRequest {
            model: &self.cfg.model,
            prompt,
            image_refs,
        };
        let attempts = self.cfg.max_retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << (attempt - 1).min(8)));
            }
            self.throttle();
            let mut req = self.agent.post(&self.cfg.endpoint);
            if let Ok(key) = std::env::var(LLM_KEY_ENV) {
                req = req.header("authorization", &format!("Bearer {key}"));
            }
            match req
                .send_json(&body)
                .and_then(|mut r| r.body_mut().read_json::<LlmResponse>())
            {
                Ok(resp) => return Ok(resp.text),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(AnnotateError::RemoteUnavailable {
            attempts,
            last_error,
        })
    }
}
