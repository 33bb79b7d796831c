//! Deterministic synthetic world with a planted quality direction.
//!
//! Embeddings are isotropic Gaussian noise; true quality is the logistic
//! of the projection onto a hidden unit direction `w*`; clicks are sampled
//! per SERP with probability proportional to `exp(κ · quality)`. With κ
//! large, clicks concentrate on high-quality items and the whole pipeline
//! becomes verifiable against ground truth. Everything derives from the
//! config seed, so identical configs yield bitwise-identical worlds.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotate::{
    AnnotatedBatch, AnnotationCache, Annotator, LabelerBackend, Lexicon, MockOracleConfig,
    DEFAULT_PROMPT_TEMPLATE,
};
use crate::embedding::{EmbeddingStore, StoreSource};
use crate::eval::{query_key, title_key};
use crate::ingest::{CandidateBatch, Impression, SerpRecord};
use crate::util::{derive_seed, logistic};

/// Component standard deviation of the embedding noise. Quality is the
/// logistic of a unit-direction projection, so this sets how spread out
/// true quality is; 4.0 pushes it toward the ends of (0, 1), keeping the
/// quality signal well above realistic label-noise levels.
pub const EMBEDDING_NOISE_SD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub embedding_dim: usize,
    pub n_serps: usize,
    /// Items per SERP before filtering/windowing.
    pub items_per_serp: usize,
    pub quality_direction_seed: u64,
    /// σ of the Gaussian noise the oracle adds to `10 · quality`.
    pub label_noise_sigma: f64,
    /// κ: click concentration on quality. 0 means uniform clicks.
    pub click_quality_weight: f64,
    /// Relative price spread around each SERP's anchor price.
    pub price_spread: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            embedding_dim: 32,
            n_serps: 1000,
            items_per_serp: 10,
            quality_direction_seed: 7,
            label_noise_sigma: 0.0,
            click_quality_weight: 10.0,
            price_spread: 0.1,
        }
    }
}

/// The hidden state behind a generated world.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Unit-norm planted quality direction.
    pub direction: Vec<f64>,
    /// item_id → true quality in (0, 1).
    pub quality: HashMap<String, f64>,
}

#[derive(Debug)]
pub struct World {
    pub records: Vec<SerpRecord>,
    pub store: EmbeddingStore,
    pub truth: GroundTruth,
}

const QUERY_WORDS: &[&str] = &[
    "sneakers", "handbag", "camera", "keyboard", "jacket", "watch", "figurine", "headphones",
    "backpack", "lamp",
];

fn unit_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Generate SERP records, an embedding store (images plus title/query text
/// embeddings), and the ground truth behind them.
pub fn gen_world(cfg: &WorldConfig) -> World {
    let direction = unit_direction(cfg.embedding_dim, cfg.quality_direction_seed);
    let mut store = EmbeddingStore::new(cfg.embedding_dim, StoreSource::Synthetic);
    let mut quality = HashMap::new();
    let mut records = Vec::with_capacity(cfg.n_serps);

    for s in 0..cfg.n_serps {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("serp-{s}")));
        let serp_id = format!("serp-{s}");
        let query = QUERY_WORDS[rng.gen_range(0..QUERY_WORDS.len())].to_string();
        let anchor_price = rng.gen_range(500u64..=20_000);

        // Query text embedding: random direction, uncorrelated with quality
        // and clicks, so the embedding-cosine baseline behaves like noise
        // at click prediction.
        let query_emb: Vec<f64> = (0..cfg.embedding_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        store
            .insert(query_key(&serp_id), query_emb.clone())
            .expect("dim matches");

        let mut qualities = Vec::with_capacity(cfg.items_per_serp);
        let mut impressions = Vec::with_capacity(cfg.items_per_serp);
        for i in 0..cfg.items_per_serp {
            let item_id = format!("item-{s}-{i}");
            let emb: Vec<f64> = (0..cfg.embedding_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * EMBEDDING_NOISE_SD
                })
                .collect();
            let proj: f64 = emb.iter().zip(&direction).map(|(e, d)| e * d).sum();
            let q = logistic(proj);
            qualities.push(q);
            quality.insert(item_id.clone(), q);

            let spread = rng.gen_range(-cfg.price_spread..=cfg.price_spread);
            let price = ((anchor_price as f64) * (1.0 + spread)).round().max(1.0) as u64;

            let title_emb: Vec<f64> = query_emb
                .iter()
                .map(|x| x + {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * 0.5
                })
                .collect();
            store
                .insert(title_key(&item_id), title_emb)
                .expect("dim matches");
            store
                .insert(format!("img:{item_id}"), emb)
                .expect("dim matches");

            impressions.push(Impression {
                item_id: item_id.clone(),
                position: i as u32,
                price,
                clicked: false,
                liked: false,
                purchased: false,
                image_ref: format!("img:{item_id}"),
                title: format!("{query} listing {i}"),
            });
        }

        // One click per SERP, softmax over κ·quality.
        let kappa = cfg.click_quality_weight;
        let weights: Vec<f64> = qualities.iter().map(|q| (kappa * q).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut clicked = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if draw < *w {
                clicked = i;
                break;
            }
            draw -= w;
        }
        impressions[clicked].clicked = true;
        if rng.gen_bool(0.3) {
            impressions[clicked].liked = true;
            if rng.gen_bool(0.4) {
                impressions[clicked].purchased = true;
            }
        }

        records.push(SerpRecord {
            serp_id,
            query: query.clone(),
            en_query: query,
            timestamp: 1_700_000_000 + s as i64,
            impressions,
        });
    }

    World {
        records,
        store,
        truth: GroundTruth { direction, quality },
    }
}

/// Build an [`Annotator`] backed by the oracle labeler for a whole world.
pub fn oracle_annotator(
    truth: &GroundTruth,
    noise_sigma: f64,
    seed: u64,
    cache: AnnotationCache,
) -> Annotator {
    Annotator::new(
        LabelerBackend::MockOracle(MockOracleConfig {
            seed,
            noise_sigma,
            truth: Some(truth.quality.clone()),
        }),
        DEFAULT_PROMPT_TEMPLATE.to_string(),
        Lexicon::default_lexicon(),
        cache,
    )
}

/// Label one batch from ground truth: `raw = clip(10·q + noise, 0, 10)`,
/// normalized per batch like any other labeler output.
pub fn oracle_labeler(
    batch: &CandidateBatch,
    truth: &GroundTruth,
    noise_sigma: f64,
    seed: u64,
) -> AnnotatedBatch {
    let mut annotator = oracle_annotator(truth, noise_sigma, seed, AnnotationCache::in_memory());
    annotator.annotate(batch).expect("oracle cannot fail")
}

/// Ground-truth JSONL row: `{"item_id": ..., "quality": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthLine {
    pub item_id: String,
    pub quality: f64,
}

pub fn write_truth_jsonl(truth: &GroundTruth, path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut keys: Vec<&String> = truth.quality.keys().collect();
    keys.sort();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for k in keys {
        let line = TruthLine {
            item_id: k.clone(),
            quality: truth.quality[k],
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))?;
    }
    Ok(())
}

pub fn read_truth_jsonl(path: &std::path::Path) -> std::io::Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TruthLine = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        map.insert(parsed.item_id, parsed.quality);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::build_batches;

    #[test]
    fn same_config_is_bitwise_identical() {
        let cfg = WorldConfig {
            n_serps: 40,
            ..WorldConfig::default()
        };
        let w1 = gen_world(&cfg);
        let w2 = gen_world(&cfg);
        assert_eq!(w1.records, w2.records);
        assert_eq!(w1.truth.direction, w2.truth.direction);
        for (k, v) in &w1.truth.quality {
            assert_eq!(v.to_bits(), w2.truth.quality[k].to_bits());
        }
        let d = crate::analytics::ks_two_sample(
            &w1.truth.quality.values().copied().collect::<Vec<_>>(),
            &w2.truth.quality.values().copied().collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(d.d_statistic, 0.0);
    }

    #[test]
    fn generated_serps_survive_ingest_without_rejects() {
        let cfg = WorldConfig {
            n_serps: 120,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let mut jsonl = String::new();
        for r in &world.records {
            jsonl.push_str(&serde_json::to_string(r).unwrap());
            jsonl.push('\n');
        }
        let parsed = crate::ingest::parse_log(jsonl.as_bytes()).unwrap();
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.records.len(), 120);
        let (batches, stats) = build_batches(&parsed.records, 0.2, 5, 2);
        assert_eq!(stats.no_click, 0, "every generated SERP has a click");
        assert_eq!(stats.multi_click, 0, "exactly one click per SERP");
        assert!(!batches.is_empty());
        for b in &batches {
            assert_eq!(b.items.iter().filter(|i| i.clicked).count(), 1);
        }
    }

    #[test]
    fn kappa_zero_clicks_are_quality_blind() {
        let cfg = WorldConfig {
            n_serps: 5000,
            click_quality_weight: 0.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let (mut clicked_sum, mut clicked_n) = (0.0, 0usize);
        let (mut other_sum, mut other_n) = (0.0, 0usize);
        for r in &world.records {
            for imp in &r.impressions {
                let q = world.truth.quality[&imp.item_id];
                if imp.clicked {
                    clicked_sum += q;
                    clicked_n += 1;
                } else {
                    other_sum += q;
                    other_n += 1;
                }
            }
        }
        let gap = (clicked_sum / clicked_n as f64) - (other_sum / other_n as f64);
        assert!(gap.abs() < 0.02, "κ=0 quality gap {gap}");
    }

    #[test]
    fn kappa_ten_clicks_prefer_quality() {
        let cfg = WorldConfig {
            n_serps: 2000,
            click_quality_weight: 10.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let (mut clicked_sum, mut clicked_n) = (0.0, 0usize);
        let (mut other_sum, mut other_n) = (0.0, 0usize);
        for r in &world.records {
            for imp in &r.impressions {
                let q = world.truth.quality[&imp.item_id];
                if imp.clicked {
                    clicked_sum += q;
                    clicked_n += 1;
                } else {
                    other_sum += q;
                    other_n += 1;
                }
            }
        }
        let gap = (clicked_sum / clicked_n as f64) - (other_sum / other_n as f64);
        assert!(gap > 0.15, "κ=10 quality gap {gap}");
    }

    #[test]
    fn noiseless_oracle_is_monotone_in_quality() {
        let cfg = WorldConfig {
            n_serps: 30,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let (batches, _) = build_batches(&world.records, 0.2, 5, 2);
        let batch = &batches[0];
        let annotated = oracle_labeler(batch, &world.truth, 0.0, 11);
        assert_eq!(annotated.annotations.len(), batch.items.len());
        for (imp, ann) in batch.items.iter().zip(&annotated.annotations) {
            let q = world.truth.quality[&imp.item_id];
            assert!((ann.raw_score - 10.0 * q).abs() < 1e-9, "raw = 10q exactly");
        }
        // Order of norm scores equals order of raw scores equals order of q.
        let mut by_q: Vec<usize> = (0..batch.items.len()).collect();
        by_q.sort_by(|&a, &b| {
            world.truth.quality[&batch.items[a].item_id]
                .partial_cmp(&world.truth.quality[&batch.items[b].item_id])
                .unwrap()
        });
        let mut by_norm: Vec<usize> = (0..batch.items.len()).collect();
        by_norm.sort_by(|&a, &b| {
            annotated.annotations[a]
                .norm_score
                .partial_cmp(&annotated.annotations[b].norm_score)
                .unwrap()
        });
        assert_eq!(by_q, by_norm);
    }

    #[test]
    fn noisy_oracle_degrades_label_quality() {
        let cfg = WorldConfig {
            n_serps: 300,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let (batches, _) = build_batches(&world.records, 0.2, 5, 2);
        // Measure how often label order disagrees with true quality order.
        let disagreement = |sigma: f64| -> f64 {
            let mut annotator =
                oracle_annotator(&world.truth, sigma, 5, AnnotationCache::in_memory());
            let (mut wrong, mut total) = (0usize, 0usize);
            for b in &batches {
                let ab = annotator.annotate(b).unwrap();
                for i in 0..b.items.len() {
                    for j in 0..b.items.len() {
                        let qi = world.truth.quality[&b.items[i].item_id];
                        let qj = world.truth.quality[&b.items[j].item_id];
                        if qi > qj {
                            total += 1;
                            if ab.annotations[i].raw_score <= ab.annotations[j].raw_score {
                                wrong += 1;
                            }
                        }
                    }
                }
            }
            wrong as f64 / total as f64
        };
        assert_eq!(disagreement(0.0), 0.0, "noiseless labels are perfect");
        let noisy = disagreement(3.0);
        assert!(noisy > 0.05, "σ=3 should corrupt some orderings: {noisy}");
    }

    #[test]
    fn truth_jsonl_round_trip() {
        let cfg = WorldConfig {
            n_serps: 5,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        write_truth_jsonl(&world.truth, &path).unwrap();
        let loaded = read_truth_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), world.truth.quality.len());
        for (k, v) in &world.truth.quality {
            assert_eq!(loaded[k].to_bits(), v.to_bits());
        }
    }
}
