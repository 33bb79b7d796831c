//! Image quality scoring for e-commerce search, learned from click logs.
//!
//! The pipeline turns raw search-result-page (SERP) logs into a trained
//! image scorer and applies it back to ranking:
//!
//! 1. [`ingest`] — parse SERP logs, apply price filtering and position
//!    windowing to isolate batches where image quality plausibly drove the
//!    click.
//! 2. [`annotate`] — label each batch with per-image aesthetic scores from
//!    an LLM backend (or a deterministic oracle), normalized per SERP.
//! 3. [`analytics`] — clicked-vs-unclicked score distributions, two-sample
//!    Kolmogorov-Smirnov tests, and adjective frequency tables over the
//!    label analyses.
//! 4. [`model`] — a small MLP head over frozen image embeddings, trained
//!    pairwise with a focal-loss objective (AdamW + cosine annealing).
//! 5. [`eval`] — ordered pair accuracy (OPA) and click accuracy (CA) for
//!    the trained scorer and the random / CTR / embedding-cosine baselines.
//! 6. [`boost`] — multiplicative or additive score boosting inside a
//!    simulated indexing-and-rerank pipeline.
//!
//! [`synthetic`] generates a fully deterministic world (embeddings, SERPs,
//! clicks, oracle labels) with a planted quality direction so that every
//! stage can be verified end to end without any proprietary data or model
//! weights. [`cli`] wires the stages into batch subcommands.

pub mod analytics;
pub mod annotate;
pub mod boost;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod synthetic;
pub mod util;
