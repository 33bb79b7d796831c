//! SERP log ingestion: parsing, price filtering, position windowing.
//!
//! The goal of this stage is to cut each search-results page down to a
//! small batch of similarly priced, similarly ranked items around the
//! clicked one, so that downstream labels compare items where image quality
//! is the plausible differentiator. A batch keeps at most five items before
//! the clicked item and at most two after it, and is discarded when the
//! window still contains more than one click or fewer than two items.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One item impression inside a SERP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub item_id: String,
    /// 0-based rank in the results page.
    pub position: u32,
    /// Price in currency minor units.
    pub price: u64,
    pub clicked: bool,
    pub liked: bool,
    pub purchased: bool,
    /// Key into the embedding store for this item's image.
    pub image_ref: String,
    pub title: String,
}

/// One search-results page with its ordered impressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerpRecord {
    pub serp_id: String,
    pub query: String,
    /// English translation of the query; may equal `query`.
    pub en_query: String,
    /// Epoch seconds.
    pub timestamp: i64,
    pub impressions: Vec<Impression>,
}

/// The price-filtered, position-windowed slice of a SERP: 2..=8 items with
/// exactly one click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub serp_id: String,
    pub query: String,
    pub en_query: String,
    pub items: Vec<Impression>,
    /// Index of the clicked item within `items`.
    pub clicked_index: usize,
}

impl CandidateBatch {
    pub fn clicked_item(&self) -> &Impression {
        &self.items[self.clicked_index]
    }
}

/// A rejected input line from [`parse_log`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

/// Result of parsing a JSONL log stream.
#[derive(Debug, Default)]
pub struct ParsedLog {
    pub records: Vec<SerpRecord>,
    pub rejects: Vec<Reject>,
}

/// Counters for one [`build_batches`] run. Record count conservation holds:
/// `records_in == batches_out + no_click + multi_click + too_small`.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records_in: usize,
    pub batches_out: usize,
    pub no_click: usize,
    pub multi_click: usize,
    pub too_small: usize,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading log stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("serp {serp_id} has no clicked impression")]
    NoClick { serp_id: String },
}

/// Why a SERP was dropped by [`position_window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discard {
    /// More than one clicked item remained inside the window.
    MultiClick,
    /// Fewer than two items remained.
    TooSmall,
}

/// Parse a JSONL stream of [`SerpRecord`]s, one per line.
///
/// Malformed lines become [`Reject`] entries (1-based line number plus the
/// serde reason, e.g. `missing field \`price\``) instead of being dropped
/// silently. Blank lines are skipped. Lines violating record invariants
/// (duplicate positions) are rejected as well; impressions are re-sorted by
/// position so downstream code can rely on position order.
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog, IngestError> {
    let mut out = ParsedLog::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SerpRecord>(&line) {
            Ok(mut rec) => {
                rec.impressions.sort_by_key(|imp| imp.position);
                let dup = rec
                    .impressions
                    .windows(2)
                    .any(|w| w[0].position == w[1].position);
                if dup {
                    out.rejects.push(Reject {
                        line: idx + 1,
                        reason: format!("duplicate impression position in serp {}", rec.serp_id),
                    });
                } else {
                    out.records.push(rec);
                }
            }
            Err(e) => out.rejects.push(Reject {
                line: idx + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Keep the first clicked impression (the anchor) plus every impression
/// whose price is within `rel_tol` of the anchor price, preserving position
/// order.
pub fn price_filter(serp: &SerpRecord, rel_tol: f64) -> Result<Vec<Impression>, IngestError> {
    let anchor = serp
        .impressions
        .iter()
        .find(|imp| imp.clicked)
        .ok_or_else(|| IngestError::NoClick {
            serp_id: serp.serp_id.clone(),
        })?;
    let limit = rel_tol * anchor.price as f64;
    Ok(serp
        .impressions
        .iter()
        .filter(|imp| {
            imp.position == anchor.position
                || (imp.price as f64 - anchor.price as f64).abs() <= limit
        })
        .cloned()
        .collect())
}

/// Window the filtered impressions around the anchor click: at most
/// `before` items preceding it and `after` items following it.
///
/// `filtered` must preserve original position order and contain the anchor.
/// Returns [`Discard::MultiClick`] when another clicked item survives inside
/// the window, [`Discard::TooSmall`] when fewer than two items remain.
pub fn position_window(
    serp: &SerpRecord,
    filtered: &[Impression],
    before: usize,
    after: usize,
) -> Result<CandidateBatch, Discard> {
    let clicked_idx = filtered
        .iter()
        .position(|imp| imp.clicked)
        .ok_or(Discard::TooSmall)?;
    let start = clicked_idx.saturating_sub(before);
    let end = (clicked_idx + after + 1).min(filtered.len());
    let window = &filtered[start..end];
    if window.iter().filter(|imp| imp.clicked).count() > 1 {
        return Err(Discard::MultiClick);
    }
    if window.len() < 2 {
        return Err(Discard::TooSmall);
    }
    Ok(CandidateBatch {
        serp_id: serp.serp_id.clone(),
        query: serp.query.clone(),
        en_query: serp.en_query.clone(),
        items: window.to_vec(),
        clicked_index: clicked_idx - start,
    })
}

/// Apply [`price_filter`] then [`position_window`] to every record,
/// counting discard reasons.
pub fn build_batches(
    records: &[SerpRecord],
    rel_tol: f64,
    before: usize,
    after: usize,
) -> (Vec<CandidateBatch>, IngestStats) {
    let mut stats = IngestStats {
        records_in: records.len(),
        ..IngestStats::default()
    };
    let mut batches = Vec::new();
    for rec in records {
        let filtered = match price_filter(rec, rel_tol) {
            Ok(f) => f,
            Err(_) => {
                stats.no_click += 1;
                continue;
            }
        };
        match position_window(rec, &filtered, before, after) {
            Ok(batch) => {
                stats.batches_out += 1;
                batches.push(batch);
            }
            Err(Discard::MultiClick) => stats.multi_click += 1,
            Err(Discard::TooSmall) => stats.too_small += 1,
        }
    }
    (batches, stats)
}
