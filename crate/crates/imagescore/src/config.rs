//! Run configuration: a TOML file plus flag overrides, with the resolved
//! result written next to each command's outputs for reproducibility.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::HttpLlmConfig;
use crate::boost::BoostConfig;
use crate::embedding::RemoteConfig;
use crate::model::TrainConfig;
use crate::synthetic::WorldConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("invalid value: {0}")]
    Validation(String),
}

/// Ingest-stage knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Relative price tolerance around the clicked item.
    pub rel_tol: f64,
    /// Window sizes around the clicked item.
    pub before: usize,
    pub after: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            rel_tol: 0.2,
            before: 5,
            after: 2,
        }
    }
}

/// Which labeler the `label` command uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum LabelerKind {
    /// Deterministic hash-based oracle (no ground truth needed).
    #[default]
    Mock,
    /// Ground-truth oracle; requires a truth file from `gen-synthetic`.
    Oracle,
    /// JSON-over-HTTP LLM endpoint.
    Http,
    /// Serve answers from the cache only; misses are errors.
    CacheOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub backend: LabelerKind,
    pub noise_sigma: f64,
    pub seed: u64,
    pub http: HttpLlmConfig,
    /// Optional prompt template file; the built-in template otherwise.
    pub template_path: Option<PathBuf>,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            backend: LabelerKind::Mock,
            noise_sigma: 0.0,
            seed: 42,
            http: HttpLlmConfig::default(),
            template_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub top_n_adjectives: usize,
    pub lexicon_path: Option<PathBuf>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            top_n_adjectives: 30,
            lexicon_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Validation split percentage (by SERP id hash).
    pub val_percent: u8,
    /// Which split to evaluate: train | val | all.
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            val_percent: 20,
            split: "val".to_string(),
        }
    }
}

/// Full run configuration; every command reads the sections it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub ingest: IngestConfig,
    pub labeler: LabelerConfig,
    pub analysis: AnalysisConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub boost: BoostConfig,
    pub world: WorldConfig,
    pub remote: RemoteConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, msg: &str| -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Validation(msg.to_string()))
            }
        };
        check(self.ingest.rel_tol >= 0.0, "ingest.rel_tol must be >= 0")?;
        check(
            self.train.learning_rate > 0.0,
            "train.learning_rate must be > 0",
        )?;
        check(
            self.train.weight_decay >= 0.0,
            "train.weight_decay must be >= 0",
        )?;
        check(self.train.batch_size > 0, "train.batch_size must be > 0")?;
        check(self.train.focal_gamma >= 0.0, "train.focal_gamma must be >= 0")?;
        check(
            self.train.min_lr_divisor >= 1.0,
            "train.min_lr_divisor must be >= 1",
        )?;
        check(
            self.labeler.noise_sigma >= 0.0,
            "labeler.noise_sigma must be >= 0",
        )?;
        check(self.boost.image_weight >= 0.0, "boost.image_weight must be >= 0")?;
        check(
            self.world.embedding_dim >= 2,
            "world.embedding_dim must be >= 2",
        )?;
        check(self.world.n_serps > 0, "world.n_serps must be > 0")?;
        check(
            self.world.items_per_serp > 0,
            "world.items_per_serp must be > 0",
        )?;
        check(
            self.world.label_noise_sigma >= 0.0,
            "world.label_noise_sigma must be >= 0",
        )?;
        check(
            self.world.click_quality_weight >= 0.0,
            "world.click_quality_weight must be >= 0",
        )?;
        check(self.eval.val_percent <= 100, "eval.val_percent must be <= 100")?;
        check(
            matches!(self.eval.split.as_str(), "train" | "val" | "all"),
            "eval.split must be one of train|val|all",
        )?;
        Ok(())
    }

    /// Write the resolved config as TOML next to a command's outputs.
    pub fn write_resolved(&self, path: &Path) -> Result<(), std::io::Error> {
        let text = toml::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text)
    }
}
