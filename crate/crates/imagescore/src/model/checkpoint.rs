//! Checkpoint persistence: a JSON manifest with row-major nested parameter
//! arrays. Floats are written in shortest-round-trip form, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Activation, Layer, ScorerModel, TrainConfig};

pub const CHECKPOINT_VERSION: &str = "imagescore-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: String, expected: String },
    #[error("malformed checkpoint: {reason}")]
    Format { reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct LayerData {
    /// Row-major weights: one inner array per output row.
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// On-disk checkpoint contents.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    layers: Vec<LayerData>,
}

pub fn save_checkpoint(
    model: &ScorerModel,
    train_config: Option<&TrainConfig>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let layers = model
        .layers
        .iter()
        .map(|l| LayerData {
            w: (0..l.rows)
                .map(|r| l.w[r * l.cols..(r + 1) * l.cols].to_vec())
                .collect(),
            b: l.b.clone(),
        })
        .collect();
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION.to_string(),
        dims: model.dims.clone(),
        activation: model.activation,
        seed: model.seed,
        train_config: train_config.cloned(),
        layers,
    };
    let json = serde_json::to_string_pretty(&ckpt).expect("serializable");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ScorerModel, Option<TrainConfig>), CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| CheckpointError::Format {
        reason: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: ckpt.version,
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    if ckpt.dims.len() < 2 || ckpt.dims.len() != ckpt.layers.len() + 1 {
        return Err(CheckpointError::Format {
            reason: format!(
                "dims {:?} inconsistent with {} layers",
                ckpt.dims,
                ckpt.layers.len()
            ),
        });
    }
    let mut layers = Vec::with_capacity(ckpt.layers.len());
    for (l, data) in ckpt.layers.iter().enumerate() {
        let (cols, rows) = (ckpt.dims[l], ckpt.dims[l + 1]);
        if data.w.len() != rows || data.b.len() != rows {
            return Err(CheckpointError::Format {
                reason: format!("layer {l} shape mismatch"),
            });
        }
        let mut w = Vec::with_capacity(rows * cols);
        for row in &data.w {
            if row.len() != cols {
                return Err(CheckpointError::Format {
                    reason: format!("layer {l} row width {} != {cols}", row.len()),
                });
            }
            w.extend_from_slice(row);
        }
        if w.iter().chain(&data.b).any(|v| !v.is_finite()) {
            return Err(CheckpointError::Format {
                reason: format!("layer {l} contains non-finite parameters"),
            });
        }
        layers.push(Layer {
            w,
            b: data.b.clone(),
            rows,
            cols,
        });
    }
    Ok((
        ScorerModel {
            dims: ckpt.dims,
            activation: ckpt.activation,
            layers,
            seed: ckpt.seed,
        },
        ckpt.train_config,
    ))
}
