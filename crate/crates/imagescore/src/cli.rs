//! Batch CLI: `gen-synthetic → ingest → label → analyze/train → eval →
//! rerank-report`, plus a hyper-parameter grid search.
//!
//! Every command reads an optional TOML config (flags win), writes its
//! resolved config next to its outputs, and exits 0 on success, 2 when an
//! input artifact is missing, 3 on validation failures. Failures print a
//! machine-readable JSON line to stderr.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analytics;
use crate::annotate::{
    read_annotated_jsonl, write_annotated_jsonl, AnnotatedBatch, AnnotationCache, Annotator,
    HttpLlmConfig, LabelerBackend, Lexicon, MockOracleConfig,
};
use crate::boost::{rerank_report, BoostConfig, BoostMode, MissingScorePolicy};
use crate::config::{ConfigError, LabelerKind, RunConfig};
use crate::embedding::EmbeddingStore;
use crate::eval::{
    baseline_scores, ca, instances_from_annotated, opa, render_markdown_table, BaselineKind,
    CtrTable, MethodResult,
};
use crate::ingest::{build_batches, parse_log, CandidateBatch};
use crate::model::{
    build_pairs, load_checkpoint, save_checkpoint, train, LossKind, PreferencePair, TrainConfig,
};
use crate::synthetic::{gen_world, read_truth_jsonl, write_truth_jsonl};
use crate::util::is_validation_serp;

#[derive(Debug)]
pub enum CliError {
    MissingInput { path: PathBuf },
    Validation(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput { .. } => 2,
            CliError::Validation(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    fn to_json(&self) -> String {
        match self {
            CliError::MissingInput { path } => serde_json::json!({
                "error": "missing input artifact",
                "path": path.display().to_string(),
            })
            .to_string(),
            CliError::Validation(reason) => {
                serde_json::json!({"error": "validation failure", "reason": reason}).to_string()
            }
            CliError::Other(reason) => {
                serde_json::json!({"error": "command failed", "reason": reason}).to_string()
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, .. } => CliError::MissingInput { path },
            other => CliError::Validation(other.to_string()),
        }
    }
}

macro_rules! other_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Other(e.to_string())
            }
        })*
    };
}

other_from!(
    std::io::Error,
    crate::ingest::IngestError,
    crate::embedding::EmbeddingError,
    crate::annotate::AnnotateError,
    crate::model::TrainError,
    crate::model::CheckpointError,
    crate::eval::EvalError,
    crate::boost::BoostError
);

#[derive(Parser)]
#[command(
    name = "imagescore",
    about = "Image quality scoring for e-commerce search: ingest click logs, label with an LLM or oracle, train a pairwise scorer, evaluate, and boost rankings",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the resolved config.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Run seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic world: logs, embeddings, truth.
    GenSynthetic {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of SERPs to generate.
        #[arg(long)]
        n_serps: Option<usize>,
        /// Embedding dimension.
        #[arg(long)]
        dim: Option<usize>,
        /// Click concentration on quality (0 = uniform clicks).
        #[arg(long)]
        kappa: Option<f64>,
        /// Oracle label noise sigma.
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Items per SERP before filtering.
        #[arg(long)]
        items_per_serp: Option<usize>,
    },
    /// Parse a SERP log and build price-filtered, position-windowed batches.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Search-log JSONL, one SERP per line.
        #[arg(long)]
        logs: PathBuf,
        /// Relative price tolerance around the clicked item.
        #[arg(long)]
        rel_tol: Option<f64>,
    },
    /// Label candidate batches with an LLM endpoint or a deterministic oracle.
    Label {
        #[command(flatten)]
        common: CommonArgs,
        /// Candidate batches JSONL from `ingest`.
        #[arg(long)]
        batches: PathBuf,
        /// Labeler backend.
        #[arg(long, value_enum)]
        backend: Option<LabelerKind>,
        /// Ground-truth JSONL (oracle backend).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Label noise sigma (mock/oracle backends).
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Annotation cache file; defaults to <out-dir>/annotation_cache.jsonl.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Prompt template file.
        #[arg(long)]
        template: Option<PathBuf>,
        /// LLM endpoint URL (http backend).
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Score-distribution, K-S, and adjective analyses of annotated batches.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Annotated batches JSONL from `label`.
        #[arg(long)]
        annotated: PathBuf,
        /// Significance level for the K-S contrasts.
        #[arg(long)]
        alpha: Option<f64>,
        /// Adjective lexicon JSON.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train the pairwise scorer head on annotated batches.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        annotated: PathBuf,
        /// Embedding JSONL store.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Focal-loss gamma.
        #[arg(long)]
        gamma: Option<f64>,
        /// Loss: focal | cross-entropy.
        #[arg(long)]
        loss: Option<String>,
        /// Hidden layer widths, e.g. 256,64.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// Validation split percentage by SERP hash.
        #[arg(long)]
        val_percent: Option<u8>,
    },
    /// OPA/CA for the trained scorer and the baselines; Markdown table out.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Trained checkpoint from `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw logs for the historical-CTR baseline (optional).
        #[arg(long)]
        logs: Option<PathBuf>,
        /// Split to evaluate: train | val | all.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        val_percent: Option<u8>,
    },
    /// Before/after reranking report for a boost mode.
    RerankReport {
        #[command(flatten)]
        common: CommonArgs,
        /// Candidate batches JSONL from `ingest`.
        #[arg(long)]
        batches: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Boost mode: off | multiplicative | additive.
        #[arg(long)]
        mode: Option<String>,
        /// Additive-mode scalar on the image score.
        #[arg(long)]
        image_weight: Option<f64>,
    },
    /// Sweep learning rate, weight decay, and gamma; report validation OPA.
    GridSearch {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        annotated: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Learning rates to try.
        #[arg(long, value_delimiter = ',')]
        learning_rates: Option<Vec<f64>>,
        /// Weight decays to try.
        #[arg(long, value_delimiter = ',')]
        weight_decays: Option<Vec<f64>>,
        /// Focal gammas to try.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Epochs per cell (keep small; this is a sweep).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        val_percent: Option<u8>,
    },
}

/// Entry point: returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenSynthetic {
            common,
            n_serps,
            dim,
            kappa,
            noise_sigma,
            items_per_serp,
        } => cmd_gen_synthetic(common, n_serps, dim, kappa, noise_sigma, items_per_serp),
        Command::Ingest {
            common,
            logs,
            rel_tol,
        } => cmd_ingest(common, logs, rel_tol),
        Command::Label {
            common,
            batches,
            backend,
            truth,
            noise_sigma,
            cache,
            template,
            endpoint,
        } => cmd_label(common, batches, backend, truth, noise_sigma, cache, template, endpoint),
        Command::Analyze {
            common,
            annotated,
            alpha,
            lexicon,
        } => cmd_analyze(common, annotated, alpha, lexicon),
        Command::Train {
            common,
            annotated,
            embeddings,
            epochs,
            learning_rate,
            weight_decay,
            batch_size,
            gamma,
            loss,
            hidden,
            val_percent,
        } => cmd_train(
            common,
            annotated,
            embeddings,
            epochs,
            learning_rate,
            weight_decay,
            batch_size,
            gamma,
            loss,
            hidden,
            val_percent,
        ),
        Command::Eval {
            common,
            annotated,
            embeddings,
            checkpoint,
            logs,
            split,
            val_percent,
        } => cmd_eval(common, annotated, embeddings, checkpoint, logs, split, val_percent),
        Command::RerankReport {
            common,
            batches,
            embeddings,
            checkpoint,
            mode,
            image_weight,
        } => cmd_rerank_report(common, batches, embeddings, checkpoint, mode, image_weight),
        Command::GridSearch {
            common,
            annotated,
            embeddings,
            learning_rates,
            weight_decays,
            gammas,
            epochs,
            val_percent,
        } => cmd_grid_search(
            common,
            annotated,
            embeddings,
            learning_rates,
            weight_decays,
            gammas,
            epochs,
            val_percent,
        ),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingInput { path: path.clone() });
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.labeler.seed = seed;
        cfg.train.seed = seed;
        cfg.world.seed = seed;
    }
    Ok(cfg)
}

fn require_input(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
        })
    }
}

fn prepare_out_dir(common: &CommonArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&common.out_dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_gen_synthetic(
    common: CommonArgs,
    n_serps: Option<usize>,
    dim: Option<usize>,
    kappa: Option<f64>,
    noise_sigma: Option<f64>,
    items_per_serp: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = n_serps {
        cfg.world.n_serps = v;
    }
    if let Some(v) = dim {
        cfg.world.embedding_dim = v;
    }
    if let Some(v) = kappa {
        cfg.world.click_quality_weight = v;
    }
    if let Some(v) = noise_sigma {
        cfg.world.label_noise_sigma = v;
    }
    if let Some(v) = items_per_serp {
        cfg.world.items_per_serp = v;
    }
    cfg.validate().map_err(CliError::from)?;
    prepare_out_dir(&common)?;

    let world = gen_world(&cfg.world);
    let logs_path = common.out_dir.join("logs.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&logs_path)?);
    for rec in &world.records {
        writeln!(out, "{}", serde_json::to_string(rec).expect("serializable"))?;
    }
    drop(out);
    world.store.save(&common.out_dir.join("embeddings.jsonl"))?;
    write_truth_jsonl(&world.truth, &common.out_dir.join("truth.jsonl"))?;
    cfg.write_resolved(&common.out_dir.join("gen_synthetic_config.toml"))?;
    println!(
        "generated {} serps, {} embeddings -> {}",
        world.records.len(),
        world.store.len(),
        common.out_dir.display()
    );
    Ok(())
}

fn cmd_ingest(common: CommonArgs, logs: PathBuf, rel_tol: Option<f64>) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = rel_tol {
        cfg.ingest.rel_tol = v;
    }
    cfg.validate().map_err(CliError::from)?;
    require_input(&logs)?;
    prepare_out_dir(&common)?;

    let file = std::fs::File::open(&logs)?;
    let parsed = parse_log(std::io::BufReader::new(file))?;
    let (batches, stats) = build_batches(
        &parsed.records,
        cfg.ingest.rel_tol,
        cfg.ingest.before,
        cfg.ingest.after,
    );

    let mut out = std::io::BufWriter::new(std::fs::File::create(common.out_dir.join("batches.jsonl"))?);
    for b in &batches {
        writeln!(out, "{}", serde_json::to_string(b).expect("serializable"))?;
    }
    drop(out);
    let mut rejects =
        std::io::BufWriter::new(std::fs::File::create(common.out_dir.join("rejects.jsonl"))?);
    for r in &parsed.rejects {
        writeln!(rejects, "{}", serde_json::to_string(r).expect("serializable"))?;
    }
    drop(rejects);
    write_json(&common.out_dir.join("ingest_stats.json"), &stats)?;
    cfg.write_resolved(&common.out_dir.join("ingest_config.toml"))?;
    println!(
        "ingested {} records -> {} batches ({} no-click, {} multi-click, {} too-small, {} rejects)",
        stats.records_in,
        stats.batches_out,
        stats.no_click,
        stats.multi_click,
        stats.too_small,
        parsed.rejects.len()
    );
    Ok(())
}

fn read_batches(path: &Path) -> Result<Vec<CandidateBatch>, CliError> {
    require_input(path)?;
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| CliError::Validation(format!("batches line {}: {e}", idx + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct LabelStats {
    batches_in: usize,
    annotated_out: usize,
    backend_calls: usize,
    cache_hits: usize,
}

#[allow(clippy::too_many_arguments)]
fn cmd_label(
    common: CommonArgs,
    batches_path: PathBuf,
    backend: Option<LabelerKind>,
    truth: Option<PathBuf>,
    noise_sigma: Option<f64>,
    cache: Option<PathBuf>,
    template: Option<PathBuf>,
    endpoint: Option<String>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = backend {
        cfg.labeler.backend = v;
    }
    if let Some(v) = noise_sigma {
        cfg.labeler.noise_sigma = v;
    }
    if let Some(v) = template {
        cfg.labeler.template_path = Some(v);
    }
    if let Some(v) = endpoint {
        cfg.labeler.http.endpoint = v;
    }
    cfg.validate().map_err(CliError::from)?;
    prepare_out_dir(&common)?;
    let batches = read_batches(&batches_path)?;

    let template_text = match &cfg.labeler.template_path {
        Some(path) => {
            require_input(path)?;
            std::fs::read_to_string(path)?
        }
        None => crate::annotate::DEFAULT_PROMPT_TEMPLATE.to_string(),
    };
    let lexicon = match &cfg.analysis.lexicon_path {
        Some(path) => {
            require_input(path)?;
            Lexicon::load(path)?
        }
        None => Lexicon::default_lexicon(),
    };
    let cache_path = cache.unwrap_or_else(|| common.out_dir.join("annotation_cache.jsonl"));
    let cache = AnnotationCache::open(&cache_path)?;

    let backend = match cfg.labeler.backend {
        LabelerKind::Mock => LabelerBackend::MockOracle(MockOracleConfig {
            seed: cfg.labeler.seed,
            noise_sigma: cfg.labeler.noise_sigma,
            truth: None,
        }),
        LabelerKind::Oracle => {
            let truth_path = truth.ok_or_else(|| {
                CliError::Validation("oracle backend requires --truth <path>".to_string())
            })?;
            require_input(&truth_path)?;
            LabelerBackend::MockOracle(MockOracleConfig {
                seed: cfg.labeler.seed,
                noise_sigma: cfg.labeler.noise_sigma,
                truth: Some(read_truth_jsonl(&truth_path)?),
            })
        }
        LabelerKind::Http => LabelerBackend::http(HttpLlmConfig {
            endpoint: cfg.labeler.http.endpoint.clone(),
            ..cfg.labeler.http.clone()
        }),
        LabelerKind::CacheOnly => LabelerBackend::CacheOnly,
    };

    let mut annotator = Annotator::new(backend, template_text, lexicon, cache);
    let mut annotated = Vec::with_capacity(batches.len());
    for batch in &batches {
        annotated.push(annotator.annotate(batch)?);
    }
    write_annotated_jsonl(&common.out_dir.join("annotated.jsonl"), &annotated)?;
    let stats = LabelStats {
        batches_in: batches.len(),
        annotated_out: annotated.len(),
        backend_calls: annotator.backend_calls(),
        cache_hits: annotator.cache_hits(),
    };
    write_json(&common.out_dir.join("label_stats.json"), &stats)?;
    cfg.write_resolved(&common.out_dir.join("label_config.toml"))?;
    println!(
        "labeled {} batches ({} backend calls, {} cache hits)",
        stats.annotated_out, stats.backend_calls, stats.cache_hits
    );
    Ok(())
}

/// Reference statistics from the original production study; context only,
/// not reproducible offline.
#[derive(Serialize)]
struct ReportedReference {
    note: &'static str,
    clicked_median: f64,
    not_clicked_median: f64,
    clicked_mean: f64,
    not_clicked_mean: f64,
    ks_p_value: f64,
}

fn cmd_analyze(
    common: CommonArgs,
    annotated_path: PathBuf,
    alpha: Option<f64>,
    lexicon: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = alpha {
        cfg.analysis.alpha = v;
    }
    if let Some(v) = lexicon {
        cfg.analysis.lexicon_path = Some(v);
    }
    cfg.validate().map_err(CliError::from)?;
    require_input(&annotated_path)?;
    prepare_out_dir(&common)?;

    let annotated = read_annotated_jsonl(&annotated_path)?;
    let lexicon = match &cfg.analysis.lexicon_path {
        Some(path) => {
            require_input(path)?;
            Lexicon::load(path)?
        }
        None => Lexicon::default_lexicon(),
    };
    let samples = analytics::collect_samples(&annotated);
    let summary = analytics::summarize(&samples);
    let contrasts = analytics::engagement_contrasts(&samples, cfg.analysis.alpha);
    let adjectives =
        analytics::adjective_table(&annotated, &lexicon, cfg.analysis.top_n_adjectives);

    #[derive(Serialize)]
    struct AnalysisReport {
        summary: analytics::SummaryReport,
        contrasts: analytics::ContrastReport,
        adjectives: analytics::AdjectiveTable,
        reported_reference: ReportedReference,
    }
    let report = AnalysisReport {
        summary,
        contrasts,
        adjectives,
        reported_reference: ReportedReference {
            note: "Reported statistics from the original production study on \
                   proprietary marketplace data; reprinted for context, not \
                   reproducible here.",
            clicked_median: 0.6,
            not_clicked_median: 0.5,
            clicked_mean: 0.5428,
            not_clicked_mean: 0.4751,
            ks_p_value: 8.367e-9,
        },
    };
    write_json(&common.out_dir.join("analysis_report.json"), &report)?;

    let mut hist = std::io::BufWriter::new(
        std::fs::File::create(common.out_dir.join("histogram.csv"))?,
    );
    writeln!(hist, "group,bin_lo,bin_hi,count")?;
    for (group, g) in &report.summary.groups {
        for (i, count) in g.histogram.iter().enumerate() {
            let lo = i as f64 / analytics::HISTOGRAM_BINS as f64;
            let hi = (i + 1) as f64 / analytics::HISTOGRAM_BINS as f64;
            writeln!(hist, "{group},{lo},{hi},{count}")?;
        }
    }
    drop(hist);
    cfg.write_resolved(&common.out_dir.join("analyze_config.toml"))?;
    println!(
        "analyzed {} samples in {} groups, {} contrasts",
        samples.len(),
        report.summary.groups.len(),
        report.contrasts.contrasts.len()
    );
    Ok(())
}

/// Split annotated batches into (train, val) by SERP id hash.
fn split_batches(
    annotated: &[AnnotatedBatch],
    val_percent: u8,
) -> (Vec<&AnnotatedBatch>, Vec<&AnnotatedBatch>) {
    annotated
        .iter()
        .partition(|ab| !is_validation_serp(&ab.batch.serp_id, val_percent))
}

fn pairs_of(batches: &[&AnnotatedBatch]) -> Vec<PreferencePair> {
    batches.iter().flat_map(|ab| build_pairs(ab)).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: CommonArgs,
    annotated_path: PathBuf,
    embeddings: PathBuf,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    gamma: Option<f64>,
    loss: Option<String>,
    hidden: Option<Vec<usize>>,
    val_percent: Option<u8>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = weight_decay {
        cfg.train.weight_decay = v;
    }
    if let Some(v) = batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = gamma {
        cfg.train.focal_gamma = v;
    }
    if let Some(v) = &loss {
        cfg.train.loss = match v.as_str() {
            "focal" => LossKind::Focal,
            "cross-entropy" | "cross_entropy" | "ce" => LossKind::CrossEntropy,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown loss {other}; expected focal|cross-entropy"
                )))
            }
        };
    }
    if let Some(v) = hidden {
        cfg.train.hidden_dims = v;
    }
    if let Some(v) = val_percent {
        cfg.eval.val_percent = v;
    }
    cfg.validate().map_err(CliError::from)?;
    require_input(&annotated_path)?;
    require_input(&embeddings)?;
    prepare_out_dir(&common)?;

    let annotated = read_annotated_jsonl(&annotated_path)?;
    let store = EmbeddingStore::load(&embeddings)?;
    let (train_batches, val_batches) = split_batches(&annotated, cfg.eval.val_percent);
    let train_pairs = pairs_of(&train_batches);
    let val_pairs = pairs_of(&val_batches);
    if train_pairs.is_empty() {
        return Err(CliError::Validation(
            "no training pairs could be built from the annotated batches".to_string(),
        ));
    }

    let (model, report) = train(&train_pairs, &store, &cfg.train, &val_pairs)?;
    save_checkpoint(&model, Some(&cfg.train), &common.out_dir.join("checkpoint.json"))?;
    report.write_csv(&common.out_dir.join("train_report.csv"))?;
    cfg.write_resolved(&common.out_dir.join("train_config.toml"))?;
    let last = report.rows.last();
    println!(
        "trained on {} pairs ({} val pairs), final loss {:.6}, best epoch {:?}",
        report.n_train_pairs,
        report.n_val_pairs,
        last.map(|r| r.train_loss).unwrap_or(f64::NAN),
        report.best_epoch
    );
    Ok(())
}

fn filter_split<'a>(
    annotated: &'a [AnnotatedBatch],
    split: &str,
    val_percent: u8,
) -> Vec<&'a AnnotatedBatch> {
    annotated
        .iter()
        .filter(|ab| match split {
            "train" => !is_validation_serp(&ab.batch.serp_id, val_percent),
            "val" => is_validation_serp(&ab.batch.serp_id, val_percent),
            _ => true,
        })
        .collect()
}

fn cmd_eval(
    common: CommonArgs,
    annotated_path: PathBuf,
    embeddings: PathBuf,
    checkpoint: PathBuf,
    logs: Option<PathBuf>,
    split: Option<String>,
    val_percent: Option<u8>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = split {
        cfg.eval.split = v;
    }
    if let Some(v) = val_percent {
        cfg.eval.val_percent = v;
    }
    cfg.validate().map_err(CliError::from)?;
    require_input(&annotated_path)?;
    require_input(&embeddings)?;
    require_input(&checkpoint)?;
    prepare_out_dir(&common)?;

    let annotated = read_annotated_jsonl(&annotated_path)?;
    let store = EmbeddingStore::load(&embeddings)?;
    let (model, _) = load_checkpoint(&checkpoint)?;
    let subset: Vec<AnnotatedBatch> = filter_split(&annotated, &cfg.eval.split, cfg.eval.val_percent)
        .into_iter()
        .cloned()
        .collect();
    if subset.is_empty() {
        return Err(CliError::Validation(format!(
            "split {} selects no annotated batches",
            cfg.eval.split
        )));
    }

    // Historical CTR from the earlier half of the raw logs, when given.
    let ctr = match &logs {
        Some(path) => {
            require_input(path)?;
            let file = std::fs::File::open(path)?;
            let parsed = parse_log(std::io::BufReader::new(file))?;
            let mut timestamps: Vec<i64> = parsed.records.iter().map(|r| r.timestamp).collect();
            timestamps.sort_unstable();
            let cutoff = timestamps
                .get(timestamps.len() / 2)
                .copied()
                .unwrap_or(i64::MAX);
            Some(CtrTable::from_records(&parsed.records, cutoff))
        }
        None => None,
    };

    let instances = instances_from_annotated(&subset, &model, &store, ctr.as_ref())?;
    let mut results = Vec::new();
    let mut skipped = BTreeMap::new();
    {
        let o = opa(&instances)?;
        let c = ca(&instances)?;
        results.push(MethodResult {
            method: "Image Score (ours)".to_string(),
            opa: o.value,
            ca: c.value,
            n_pairs_opa: o.n_pairs,
            n_pairs_ca: c.n_pairs,
            seed: cfg.seed,
        });
    }
    for kind in [
        BaselineKind::Random,
        BaselineKind::CtrHighest,
        BaselineKind::ClipScore,
    ] {
        match baseline_scores(&instances, kind, cfg.seed) {
            Ok(swapped) => {
                let o = opa(&swapped)?;
                let c = ca(&swapped)?;
                results.push(MethodResult {
                    method: kind.label().to_string(),
                    opa: o.value,
                    ca: c.value,
                    n_pairs_opa: o.n_pairs,
                    n_pairs_ca: c.n_pairs,
                    seed: cfg.seed,
                });
            }
            Err(e) => {
                skipped.insert(kind.label().to_string(), e.to_string());
            }
        }
    }

    #[derive(Serialize)]
    struct EvalReport {
        split: String,
        n_instances: usize,
        results: Vec<MethodResult>,
        skipped_baselines: BTreeMap<String, String>,
        reported_reference: Vec<ReferenceRow>,
    }
    #[derive(Serialize)]
    struct ReferenceRow {
        method: String,
        opa_percent: f64,
        ca_percent: f64,
    }
    let report = EvalReport {
        split: cfg.eval.split.clone(),
        n_instances: instances.len(),
        results: results.clone(),
        skipped_baselines: skipped,
        reported_reference: crate::eval::REPORTED_REFERENCE
            .iter()
            .map(|(m, o, c)| ReferenceRow {
                method: m.to_string(),
                opa_percent: *o,
                ca_percent: *c,
            })
            .collect(),
    };
    write_json(&common.out_dir.join("eval_report.json"), &report)?;
    std::fs::write(
        common.out_dir.join("eval_table.md"),
        render_markdown_table(&results),
    )?;
    cfg.write_resolved(&common.out_dir.join("eval_config.toml"))?;
    for r in &results {
        println!(
            "{:<24} OPA {:>6.2}%  CA {:>6.2}%",
            r.method,
            r.opa * 100.0,
            r.ca * 100.0
        );
    }
    Ok(())
}

fn cmd_rerank_report(
    common: CommonArgs,
    batches_path: PathBuf,
    embeddings: PathBuf,
    checkpoint: PathBuf,
    mode: Option<String>,
    image_weight: Option<f64>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = &mode {
        cfg.boost.mode = match v.as_str() {
            "off" => BoostMode::Off,
            "multiplicative" | "mult" => BoostMode::Multiplicative,
            "additive" | "add" => BoostMode::Additive,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown boost mode {other}; expected off|multiplicative|additive"
                )))
            }
        };
    }
    if let Some(v) = image_weight {
        cfg.boost.image_weight = v;
    }
    cfg.validate().map_err(CliError::from)?;
    require_input(&embeddings)?;
    require_input(&checkpoint)?;
    prepare_out_dir(&common)?;

    let batches = read_batches(&batches_path)?;
    let store = EmbeddingStore::load(&embeddings)?;
    let (model, _) = load_checkpoint(&checkpoint)?;
    let boost_cfg = BoostConfig {
        mode: cfg.boost.mode,
        image_weight: cfg.boost.image_weight,
        missing_score_policy: MissingScorePolicy::Neutral,
    };
    let report = rerank_report(&batches, &model, &store, &boost_cfg)?;
    std::fs::write(common.out_dir.join("rerank_report.md"), report.to_markdown())?;
    report.write_csv(&common.out_dir.join("rerank_report.csv"))?;
    write_json(&common.out_dir.join("rerank_report.json"), &report)?;
    cfg.write_resolved(&common.out_dir.join("rerank_report_config.toml"))?;
    println!(
        "reranked {} serps, mean clicked rank {:.4} -> {:.4}",
        report.serps.len(),
        report.mean_clicked_rank_before,
        report.mean_clicked_rank_after
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_grid_search(
    common: CommonArgs,
    annotated_path: PathBuf,
    embeddings: PathBuf,
    learning_rates: Option<Vec<f64>>,
    weight_decays: Option<Vec<f64>>,
    gammas: Option<Vec<f64>>,
    epochs: Option<usize>,
    val_percent: Option<u8>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(v) = epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = val_percent {
        cfg.eval.val_percent = v;
    }
    cfg.validate().map_err(CliError::from)?;
    require_input(&annotated_path)?;
    require_input(&embeddings)?;
    prepare_out_dir(&common)?;

    let lrs = learning_rates.unwrap_or_else(|| vec![1e-3, 1e-4, 1e-5]);
    let wds = weight_decays.unwrap_or_else(|| vec![1e-2, 1e-3]);
    let gs = gammas.unwrap_or_else(|| vec![0.0, 1.0, 2.0]);

    let annotated = read_annotated_jsonl(&annotated_path)?;
    let store = EmbeddingStore::load(&embeddings)?;
    let (train_batches, val_batches) = split_batches(&annotated, cfg.eval.val_percent);
    let train_pairs = pairs_of(&train_batches);
    let val_pairs = pairs_of(&val_batches);
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(CliError::Validation(
            "grid search needs non-empty train and validation pair sets".to_string(),
        ));
    }

    #[derive(Serialize)]
    struct Cell {
        learning_rate: f64,
        weight_decay: f64,
        gamma: f64,
        best_val_opa: f64,
        best_epoch: Option<usize>,
        final_train_loss: f64,
    }
    let mut cells = Vec::new();
    for &lr in &lrs {
        for &wd in &wds {
            for &g in &gs {
                let cell_cfg = TrainConfig {
                    learning_rate: lr,
                    weight_decay: wd,
                    focal_gamma: g,
                    loss: LossKind::Focal,
                    ..cfg.train.clone()
                };
                let (_, report) = train(&train_pairs, &store, &cell_cfg, &val_pairs)?;
                let best = report
                    .rows
                    .iter()
                    .filter_map(|r| r.val_opa)
                    .fold(f64::NEG_INFINITY, f64::max);
                cells.push(Cell {
                    learning_rate: lr,
                    weight_decay: wd,
                    gamma: g,
                    best_val_opa: best,
                    best_epoch: report.best_epoch,
                    final_train_loss: report.rows.last().map(|r| r.train_loss).unwrap_or(f64::NAN),
                });
                println!(
                    "lr={lr:<8} wd={wd:<8} gamma={g:<4} -> best val OPA {best:.4}"
                );
            }
        }
    }
    cells.sort_by(|a, b| b.best_val_opa.partial_cmp(&a.best_val_opa).expect("finite"));

    let mut out =
        std::io::BufWriter::new(std::fs::File::create(common.out_dir.join("grid_report.csv"))?);
    writeln!(out, "learning_rate,weight_decay,gamma,best_val_opa,best_epoch,final_train_loss")?;
    for c in &cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.learning_rate,
            c.weight_decay,
            c.gamma,
            c.best_val_opa,
            c.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            c.final_train_loss
        )?;
    }
    drop(out);
    write_json(&common.out_dir.join("grid_report.json"), &cells)?;
    cfg.write_resolved(&common.out_dir.join("grid_search_config.toml"))?;
    Ok(())
}
