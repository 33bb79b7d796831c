//! Applying image scores to search ranking: multiplicative or additive
//! boosting, a simulated indexing pipeline, and before/after rerank
//! reports.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingStore;
use crate::ingest::CandidateBatch;
use crate::model::ScorerModel;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// One item in the simulated search index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedItem {
    pub item_id: String,
    pub existing_relevance_score: f64,
    /// Present only when the item was scored (fresh enough at index time).
    pub image_score: Option<f64>,
    /// Epoch seconds.
    pub created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    #[default]
    Off,
    Multiplicative,
    Additive,
}

/// How items without an image score participate in boosting. Either way
/// they keep their raw relevance; `Skip` additionally marks them as
/// unboosted in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingScorePolicy {
    #[default]
    Neutral,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub mode: BoostMode,
    /// Scalar on the image score in additive mode; 1.0 recovers the plain
    /// additive formula.
    pub image_weight: f64,
    pub missing_score_policy: MissingScorePolicy,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            mode: BoostMode::Multiplicative,
            image_weight: 1.0,
            missing_score_policy: MissingScorePolicy::Neutral,
        }
    }
}

/// Final ranking score for one item.
///
/// Multiplicative: `relevance × image_score`; additive:
/// `relevance + image_weight × image_score`. A missing image score leaves
/// relevance untouched under both policies (neutral element 1.0 or 0.0).
pub fn final_score(item: &IndexedItem, cfg: &BoostConfig) -> f64 {
    let rel = item.existing_relevance_score;
    match (cfg.mode, item.image_score) {
        (BoostMode::Off, _) => rel,
        (BoostMode::Multiplicative, Some(s)) => rel * s,
        (BoostMode::Additive, Some(s)) => rel + cfg.image_weight * s,
        (_, None) => rel,
    }
}

/// Sort items by final score descending; ties break by `created_at`
/// descending then `item_id` ascending, giving a deterministic total
/// order.
pub fn rerank(items: &[IndexedItem], cfg: &BoostConfig) -> Vec<IndexedItem> {
    let mut out = items.to_vec();
    out.sort_by(|a, b| {
        final_score(b, cfg)
            .partial_cmp(&final_score(a, cfg))
            .expect("finite scores")
            .then(b.created_at.cmp(&a.created_at))
            .then(a.item_id.cmp(&b.item_id))
    });
    out
}

/// One item update flowing through the indexing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEvent {
    pub item_id: String,
    pub image_ref: String,
    pub relevance: f64,
    pub created_at: i64,
}

/// An event the analyzer could not score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub item_id: String,
    pub reason: String,
}

/// Simulated search index state: analyzer scores events, feeder upserts.
/// Last write per item id wins, so replaying a stream is idempotent.
#[derive(Debug, Default)]
pub struct SearchIndex {
    items: BTreeMap<String, IndexedItem>,
    pub dead_letters: Vec<DeadLetter>,
}

impl SearchIndex {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&IndexedItem> {
        self.items.get(item_id)
    }

    pub fn items(&self) -> impl Iterator<Item = &IndexedItem> {
        self.items.values()
    }

    /// Write the index as a JSONL snapshot, ordered by item id.
    pub fn save(&self, path: &Path) -> Result<(), BoostError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for item in self.items.values() {
            writeln!(out, "{}", serde_json::to_string(item).expect("serializable"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BoostError> {
        let file = std::fs::File::open(path)?;
        let mut index = SearchIndex::default();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let item: IndexedItem =
                serde_json::from_str(&line).map_err(|e| BoostError::Malformed {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            index.items.insert(item.item_id.clone(), item);
        }
        Ok(index)
    }
}

/// Run item updates through the analyzer/feeder pipeline.
///
/// Items created within `freshness_cutoff_days` of `now` are scored
/// synchronously through the model; older items are indexed without an
/// image score. Scoring failures park the event in the dead-letter list
/// and the pipeline continues.
pub fn index_pipeline(
    events: &[ItemEvent],
    scorer: &ScorerModel,
    store: &EmbeddingStore,
    freshness_cutoff_days: i64,
    now: i64,
) -> SearchIndex {
    let mut index = SearchIndex::default();
    let cutoff_secs = freshness_cutoff_days * 86_400;
    for event in events {
        let fresh = now - event.created_at <= cutoff_secs;
        let image_score = if fresh {
            match store.get(&event.image_ref).and_then(|e| {
                scorer
                    .score(e)
                    .map_err(|err| crate::embedding::EmbeddingError::Malformed {
                        line: 0,
                        reason: err.to_string(),
                    })
            }) {
                Ok(s) => Some(s),
                Err(e) => {
                    index.dead_letters.push(DeadLetter {
                        item_id: event.item_id.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        } else {
            None
        };
        index.items.insert(
            event.item_id.clone(),
            IndexedItem {
                item_id: event.item_id.clone(),
                existing_relevance_score: event.relevance,
                image_score,
                created_at: event.created_at,
            },
        );
    }
    index
}

/// Read an event stream from JSONL.
pub fn read_events(path: &Path) -> Result<Vec<ItemEvent>, BoostError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| BoostError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Per-SERP before/after view of a rerank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerpRerank {
    pub serp_id: String,
    pub original_order: Vec<String>,
    pub boosted_order: Vec<String>,
    /// 1-based rank of the clicked item before boosting.
    pub clicked_rank_before: usize,
    pub clicked_rank_after: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RerankReport {
    pub serps: Vec<SerpRerank>,
    /// Mean of (rank_before − rank_after); positive means the clicked item
    /// moved up.
    pub mean_clicked_rank_delta: f64,
    pub mean_clicked_rank_before: f64,
    pub mean_clicked_rank_after: f64,
}

/// Score every batch item, rerank under `cfg`, and report where the
/// clicked item landed.
///
/// Batches carry no relevance scalar, so the original SERP order is mapped
/// to a reciprocal-rank relevance proxy (`1/(1+rank)`): boosting off
/// reproduces the original order exactly.
pub fn rerank_report(
    batches: &[CandidateBatch],
    scorer: &ScorerModel,
    store: &EmbeddingStore,
    cfg: &BoostConfig,
) -> Result<RerankReport, crate::eval::EvalError> {
    let mut report = RerankReport::default();
    let mut deltas = Vec::with_capacity(batches.len());
    for batch in batches {
        let indexed: Vec<IndexedItem> = batch
            .items
            .iter()
            .enumerate()
            .map(|(rank, imp)| {
                let emb =
                    store
                        .get(&imp.image_ref)
                        .map_err(|_| crate::eval::EvalError::MissingEmbedding {
                            key: imp.image_ref.clone(),
                        })?;
                let score =
                    scorer
                        .score(emb)
                        .map_err(|_| crate::eval::EvalError::MissingEmbedding {
                            key: imp.image_ref.clone(),
                        })?;
                Ok(IndexedItem {
                    item_id: imp.item_id.clone(),
                    existing_relevance_score: 1.0 / (1.0 + rank as f64),
                    image_score: Some(score),
                    created_at: 0,
                })
            })
            .collect::<Result<_, crate::eval::EvalError>>()?;
        let boosted = rerank(&indexed, cfg);
        let clicked_id = &batch.items[batch.clicked_index].item_id;
        let before = batch.clicked_index + 1;
        let after = boosted
            .iter()
            .position(|i| &i.item_id == clicked_id)
            .expect("rerank is a permutation")
            + 1;
        deltas.push(before as f64 - after as f64);
        report.serps.push(SerpRerank {
            serp_id: batch.serp_id.clone(),
            original_order: batch.items.iter().map(|i| i.item_id.clone()).collect(),
            boosted_order: boosted.iter().map(|i| i.item_id.clone()).collect(),
            clicked_rank_before: before,
            clicked_rank_after: after,
        });
    }
    if !report.serps.is_empty() {
        let n = report.serps.len() as f64;
        report.mean_clicked_rank_delta = deltas.iter().sum::<f64>() / n;
        report.mean_clicked_rank_before =
            report.serps.iter().map(|s| s.clicked_rank_before as f64).sum::<f64>() / n;
        report.mean_clicked_rank_after =
            report.serps.iter().map(|s| s.clicked_rank_after as f64).sum::<f64>() / n;
    }
    Ok(report)
}

impl RerankReport {
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str("| SERP | clicked rank before | clicked rank after | boosted order |\n");
        md.push_str("|---|---|---|---|\n");
        for s in &self.serps {
            md.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                s.serp_id,
                s.clicked_rank_before,
                s.clicked_rank_after,
                s.boosted_order.join(" > ")
            ));
        }
        md.push_str(&format!(
            "\nMean clicked rank: {:.4} → {:.4} (delta {:+.4})\n",
            self.mean_clicked_rank_before, self.mean_clicked_rank_after, self.mean_clicked_rank_delta
        ));
        md
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "serp_id,clicked_rank_before,clicked_rank_after")?;
        for s in &self.serps {
            writeln!(
                out,
                "{},{},{}",
                s.serp_id, s.clicked_rank_before, s.clicked_rank_after
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: &str, rel: f64, score: Option<f64>, created_at: i64) -> IndexedItem {
        IndexedItem {
            item_id: id.to_string(),
            existing_relevance_score: rel,
            image_score: score,
            created_at,
        }
    }

    #[test]
    fn final_score_formulas() {
        let cfg_mult = BoostConfig {
            mode: BoostMode::Multiplicative,
            ..BoostConfig::default()
        };
        let cfg_add = BoostConfig {
            mode: BoostMode::Additive,
            image_weight: 1.0,
            ..BoostConfig::default()
        };
        let it = item("a", 2.0, Some(0.5), 0);
        assert_eq!(final_score(&it, &cfg_mult), 1.0);
        assert_eq!(final_score(&it, &cfg_add), 2.5);
        let missing = item("b", 2.0, None, 0);
        assert_eq!(final_score(&missing, &cfg_mult), 2.0);
        assert_eq!(final_score(&missing, &cfg_add), 2.0);
        let half = BoostConfig {
            mode: BoostMode::Additive,
            image_weight: 0.5,
            ..BoostConfig::default()
        };
        assert_eq!(final_score(&it, &half), 2.25);
    }

    #[test]
    fn off_mode_keeps_relevance_order() {
        let items = vec![
            item("a", 3.0, Some(0.1), 0),
            item("b", 2.0, Some(0.9), 0),
            item("c", 1.0, Some(0.9), 0),
        ];
        let cfg = BoostConfig {
            mode: BoostMode::Off,
            ..BoostConfig::default()
        };
        let order: Vec<String> = rerank(&items, &cfg).into_iter().map(|i| i.item_id).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    #[test]
    fn equal_relevance_sorts_by_image_score() {
        let items = vec![
            item("low", 2.0, Some(0.1), 0),
            item("high", 2.0, Some(0.9), 0),
        ];
        let cfg = BoostConfig::default();
        let order: Vec<String> = rerank(&items, &cfg).iter().map(|i| i.item_id.clone()).collect();
        assert_eq!(order, vec!["high", "low"]);
    }

    #[test]
    fn crafted_serp_matches_brute_force_sort() {
        let items: Vec<IndexedItem> = (0..8)
            .map(|k| {
                item(
                    &format!("i{k}"),
                    (8 - k) as f64,
                    Some((k as f64) / 10.0 + 0.1),
                    k as i64,
                )
            })
            .collect();
        let cfg = BoostConfig::default();
        let got: Vec<String> = rerank(&items, &cfg).iter().map(|i| i.item_id.clone()).collect();
        // Independent oracle: compute scores, sort with the same tie rule.
        let mut scored: Vec<(f64, i64, String)> = items
            .iter()
            .map(|i| {
                (
                    i.existing_relevance_score * i.image_score.unwrap(),
                    i.created_at,
                    i.item_id.clone(),
                )
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
        });
        let want: Vec<String> = scored.into_iter().map(|(_, _, id)| id).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn pipeline_scores_fresh_items_only() {
        use crate::embedding::StoreSource;
        use crate::model::Activation;
        let mut store = EmbeddingStore::new(2, StoreSource::Synthetic);
        store.insert("img-fresh".into(), vec![1.0, 0.0]).unwrap();
        store.insert("img-old".into(), vec![0.0, 1.0]).unwrap();
        let scorer = ScorerModel::new(2, &[], Activation::Softplus, 0);
        let day = 86_400i64;
        let now = 200 * day;
        let events = vec![
            ItemEvent {
                item_id: "fresh".into(),
                image_ref: "img-fresh".into(),
                relevance: 1.0,
                created_at: now - 10 * day,
            },
            ItemEvent {
                item_id: "old".into(),
                image_ref: "img-old".into(),
                relevance: 1.0,
                created_at: now - 120 * day,
            },
        ];
        let index = index_pipeline(&events, &scorer, &store, 90, now);
        assert!(index.get("fresh").unwrap().image_score.is_some());
        assert!(index.get("old").unwrap().image_score.is_none());
        assert!(index.dead_letters.is_empty());
    }

    #[test]
    fn pipeline_parks_unscorable_events_and_continues() {
        use crate::embedding::StoreSource;
        use crate::model::Activation;
        let mut store = EmbeddingStore::new(2, StoreSource::Synthetic);
        store.insert("img-ok".into(), vec![1.0, 0.0]).unwrap();
        let scorer = ScorerModel::new(2, &[], Activation::Softplus, 0);
        let events = vec![
            ItemEvent {
                item_id: "broken".into(),
                image_ref: "missing-ref".into(),
                relevance: 1.0,
                created_at: 0,
            },
            ItemEvent {
                item_id: "ok".into(),
                image_ref: "img-ok".into(),
                relevance: 1.0,
                created_at: 0,
            },
        ];
        let index = index_pipeline(&events, &scorer, &store, 90, 0);
        assert_eq!(index.len(), 1);
        assert_eq!(index.dead_letters.len(), 1);
        assert_eq!(index.dead_letters[0].item_id, "broken");
        assert!(index.dead_letters[0].reason.contains("missing-ref"));
    }

    #[test]
    fn pipeline_is_idempotent_with_last_write_wins() {
        use crate::embedding::StoreSource;
        use crate::model::Activation;
        let mut store = EmbeddingStore::new(2, StoreSource::Synthetic);
        store.insert("img".into(), vec![1.0, 0.0]).unwrap();
        let scorer = ScorerModel::new(2, &[], Activation::Softplus, 0);
        let events = vec![
            ItemEvent {
                item_id: "a".into(),
                image_ref: "img".into(),
                relevance: 1.0,
                created_at: 0,
            },
            ItemEvent {
                item_id: "a".into(),
                image_ref: "img".into(),
                relevance: 5.0,
                created_at: 1,
            },
        ];
        let once = index_pipeline(&events, &scorer, &store, 90, 10);
        assert_eq!(once.len(), 1);
        assert_eq!(once.get("a").unwrap().existing_relevance_score, 5.0);
        // Replay the stream twice: identical state.
        let doubled: Vec<ItemEvent> = events.iter().chain(&events).cloned().collect();
        let twice = index_pipeline(&doubled, &scorer, &store, 90, 10);
        assert_eq!(once.get("a"), twice.get("a"));
        assert_eq!(once.len(), twice.len());
    }

    #[test]
    fn index_snapshot_round_trips() {
        use crate::embedding::StoreSource;
        use crate::model::Activation;
        let mut store = EmbeddingStore::new(2, StoreSource::Synthetic);
        store.insert("img".into(), vec![0.5, -0.5]).unwrap();
        let scorer = ScorerModel::new(2, &[], Activation::Softplus, 0);
        let events = vec![ItemEvent {
            item_id: "a".into(),
            image_ref: "img".into(),
            relevance: 1.25,
            created_at: 3,
        }];
        let index = index_pipeline(&events, &scorer, &store, 90, 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        index.save(&path).unwrap();
        let loaded = SearchIndex::load(&path).unwrap();
        assert_eq!(loaded.get("a"), index.get("a"));
    }

    prop_compose! {
        fn arb_items()(
            n in 1usize..12,
            seed in any::<u64>(),
        ) -> Vec<IndexedItem> {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            (0..n)
                .map(|k| IndexedItem {
                    item_id: format!("i{k}"),
                    existing_relevance_score: rng.gen_range(0.0..10.0),
                    image_score: if rng.gen_bool(0.8) {
                        Some(rng.gen_range(0.0..1.0))
                    } else {
                        None
                    },
                    created_at: rng.gen_range(0..1000),
                })
                .collect()
        }
    }

    proptest! {
        #[test]
        fn rerank_is_a_permutation(items in arb_items(), additive in any::<bool>()) {
            let cfg = BoostConfig {
                mode: if additive { BoostMode::Additive } else { BoostMode::Multiplicative },
                ..BoostConfig::default()
            };
            let out = rerank(&items, &cfg);
            prop_assert_eq!(out.len(), items.len());
            let mut a: Vec<&str> = items.iter().map(|i| i.item_id.as_str()).collect();
            let mut b: Vec<&str> = out.iter().map(|i| i.item_id.as_str()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        /// Constant image scores never change the relevance order, in
        /// either mode.
        #[test]
        fn constant_scores_preserve_relevance_order(
            items in arb_items(),
            c in 0.05f64..1.0,
            additive in any::<bool>(),
        ) {
            let constant: Vec<IndexedItem> = items
                .iter()
                .map(|i| IndexedItem { image_score: Some(c), ..i.clone() })
                .collect();
            let cfg = BoostConfig {
                mode: if additive { BoostMode::Additive } else { BoostMode::Multiplicative },
                ..BoostConfig::default()
            };
            let off = BoostConfig { mode: BoostMode::Off, ..BoostConfig::default() };
            let boosted: Vec<String> =
                rerank(&constant, &cfg).into_iter().map(|i| i.item_id).collect();
            let baseline: Vec<String> =
                rerank(&constant, &off).into_iter().map(|i| i.item_id).collect();
            prop_assert_eq!(boosted, baseline);
        }

        /// Additive boosting with weight 0 is a no-op on the order.
        #[test]
        fn zero_weight_additive_preserves_order(items in arb_items()) {
            let cfg = BoostConfig {
                mode: BoostMode::Additive,
                image_weight: 0.0,
                ..BoostConfig::default()
            };
            let off = BoostConfig { mode: BoostMode::Off, ..BoostConfig::default() };
            let boosted: Vec<String> =
                rerank(&items, &cfg).into_iter().map(|i| i.item_id).collect();
            let baseline: Vec<String> =
                rerank(&items, &off).into_iter().map(|i| i.item_id).collect();
            prop_assert_eq!(boosted, baseline);
        }
    }
}
