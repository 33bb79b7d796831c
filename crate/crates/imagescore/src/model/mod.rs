//! The image scorer: a small MLP head over frozen embeddings, trained
//! pairwise with a focal-loss objective.

mod checkpoint;
mod loss;
mod optim;
mod pairs;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION,
};
pub use loss::{pair_loss, pair_loss_grad};
pub use optim::{cosine_lr, AdamW};
pub use pairs::{build_pairs, PreferencePair};
pub use train::{grad_check, train, EpochRow, LossKind, TrainConfig, TrainError, TrainReport};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::logistic;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dimension {found} does not match model input {expected}")]
    DimMismatch { expected: usize, found: usize },
}

/// Hidden-layer activation. The default is softplus, a smooth ramp, so the
/// whole network stays differentiable for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => crate::util::softplus(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => logistic(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh() * x.tanh(),
        }
    }
}

/// One dense layer; `w` is row-major `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
            rows,
            cols,
        }
    }
}

/// MLP scorer over frozen embeddings. The raw network output is a logit;
/// [`ScorerModel::score`] squashes it through a logistic to (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Per-layer activations recorded during a forward pass, for backprop.
pub struct ForwardTrace {
    /// Input to each layer (layer 0 sees the embedding).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

/// Gradient buffers matching a model's layer shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &ScorerModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x = 0.0);
            l.b.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

impl ScorerModel {
    /// Build a model with the given input dimension and hidden widths.
    /// Hidden layers get scaled-uniform fan-in init from `seed`; the final
    /// layer is zero-initialized so an untrained model scores 0.5
    /// everywhere.
    pub fn new(input_dim: usize, hidden_dims: &[usize], activation: Activation, seed: u64) -> Self {
        let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden_dims);
        dims.push(1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (cols, rows) = (dims[l], dims[l + 1]);
                let mut layer = Layer::zeros(rows, cols);
                if l + 1 < n_layers {
                    let bound = 1.0 / (cols as f64).sqrt();
                    for w in layer.w.iter_mut() {
                        *w = rng.gen_range(-bound..bound);
                    }
                }
                layer
            })
            .collect();
        Self {
            dims,
            activation,
            layers,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_dim(&self, e: &[f64]) -> Result<(), ModelError> {
        if e.len() != self.input_dim() {
            return Err(ModelError::DimMismatch {
                expected: self.input_dim(),
                found: e.len(),
            });
        }
        Ok(())
    }

    /// Raw pre-squash output.
    pub fn forward_logit(&self, e: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(e)?;
        let mut x = e.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.b[r];
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                out[r] = if l < last {
                    self.activation.apply(acc)
                } else {
                    acc
                };
            }
            x = out;
        }
        Ok(x[0])
    }

    /// Image score in (0, 1).
    pub fn score(&self, e: &[f64]) -> Result<f64, ModelError> {
        Ok(logistic(self.forward_logit(e)?))
    }

    /// Forward pass keeping every pre-activation for backprop.
    pub fn forward_trace(&self, e: &[f64]) -> Result<(f64, ForwardTrace), ModelError> {
        self.check_dim(e)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = e.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(x.clone());
            let mut z = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.b[r];
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                z[r] = acc;
            }
            pre.push(z.clone());
            x = if l < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z
            };
        }
        Ok((x[0], ForwardTrace { inputs, pre }))
    }

    /// Accumulate `upstream · ∂logit/∂θ` into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: f64, grads: &mut Gradients) {
        // Delta w.r.t. each layer's pre-activation, starting from the
        // scalar output.
        let mut delta = vec![upstream];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for r in 0..layer.rows {
                let d = delta[r];
                g.b[r] += d;
                let grow = &mut g.w[r * layer.cols..(r + 1) * layer.cols];
                for (gw, xi) in grow.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer through W and its activation.
            let prev_pre = &trace.pre[l - 1];
            let mut next = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let d = delta[r];
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                for (nx, wi) in next.iter_mut().zip(row) {
                    *nx += d * wi;
                }
            }
            for (nx, &z) in next.iter_mut().zip(prev_pre) {
                *nx *= self.activation.derivative(z);
            }
            delta = next;
        }
    }

    /// Visit every parameter as a mutable flat slice pair per layer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
    }
}
