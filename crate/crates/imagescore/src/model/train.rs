//! Mini-batch pairwise training with AdamW and cosine annealing.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    cosine_lr, pair_loss, pair_loss_grad, Activation, AdamW, Gradients, PreferencePair,
    ScorerModel,
};
use crate::embedding::EmbeddingStore;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no embedding stored for key {key}")]
    MissingEmbedding { key: String },
    #[error("training produced a non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("no training pairs supplied")]
    NoPairs,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Objective choice: focal loss or its γ = 0 special case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Focal,
    CrossEntropy,
}

/// Hyper-parameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub focal_gamma: f64,
    pub loss: LossKind,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// Cosine annealing floor is `learning_rate / min_lr_divisor`.
    pub min_lr_divisor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            epochs: 100,
            batch_size: 128,
            focal_gamma: 2.0,
            loss: LossKind::Focal,
            hidden_dims: vec![256, 64],
            activation: Activation::Softplus,
            min_lr_divisor: 100.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn effective_gamma(&self) -> f64 {
        match self.loss {
            LossKind::Focal => self.focal_gamma,
            LossKind::CrossEntropy => 0.0,
        }
    }
}

/// Per-epoch training log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_opa: Option<f64>,
    pub val_ca: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Epoch whose checkpoint was kept (best validation OPA), when
    /// validation pairs were supplied.
    pub best_epoch: Option<usize>,
    pub n_train_pairs: usize,
    pub n_val_pairs: usize,
}

impl TrainReport {
    /// CSV with columns epoch,train_loss,val_opa,val_ca,lr.
    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,train_loss,val_opa,val_ca,lr")?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                fmt(r.val_opa),
                fmt(r.val_ca),
                r.lr
            )?;
        }
        Ok(())
    }
}

/// Resolve every pair's embeddings up front so missing keys fail before any
/// training work.
fn resolve<'s>(
    pairs: &[PreferencePair],
    store: &'s EmbeddingStore,
) -> Result<Vec<(&'s [f64], &'s [f64])>, TrainError> {
    pairs
        .iter()
        .map(|p| {
            let w = store
                .get(&p.winner_key)
                .map_err(|_| TrainError::MissingEmbedding {
                    key: p.winner_key.clone(),
                })?;
            let l = store
                .get(&p.loser_key)
                .map_err(|_| TrainError::MissingEmbedding {
                    key: p.loser_key.clone(),
                })?;
            Ok((w, l))
        })
        .collect()
}

/// Fraction of pairs the model orders correctly (ties count as wrong), and
/// the clicked-winner subset of the same.
fn pair_metrics(model: &ScorerModel, pairs: &[PreferencePair], resolved: &[(&[f64], &[f64])]) -> (Option<f64>, Option<f64>) {
    if pairs.is_empty() {
        return (None, None);
    }
    let mut correct = 0usize;
    let mut clicked_total = 0usize;
    let mut clicked_correct = 0usize;
    for (pair, (we, le)) in pairs.iter().zip(resolved) {
        let sw = model.forward_logit(we).expect("dims prevalidated");
        let sl = model.forward_logit(le).expect("dims prevalidated");
        let ok = sw > sl;
        if ok {
            correct += 1;
        }
        if pair.winner_clicked {
            clicked_total += 1;
            if ok {
                clicked_correct += 1;
            }
        }
    }
    let opa = Some(correct as f64 / pairs.len() as f64);
    let ca = if clicked_total > 0 {
        Some(clicked_correct as f64 / clicked_total as f64)
    } else {
        None
    };
    (opa, ca)
}

/// Train the scorer head on preference pairs.
///
/// Deterministic for a fixed config: batch order comes from a seeded
/// shuffle, updates run single-threaded in pair order. When validation
/// pairs are given, the checkpoint with the best validation OPA is
/// returned (earliest epoch wins ties); otherwise the final model.
pub fn train(
    pairs: &[PreferencePair],
    store: &EmbeddingStore,
    cfg: &TrainConfig,
    val_pairs: &[PreferencePair],
) -> Result<(ScorerModel, TrainReport), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let resolved = resolve(pairs, store)?;
    let val_resolved = resolve(val_pairs, store)?;
    let gamma = cfg.effective_gamma();

    let mut model = ScorerModel::new(store.dim(), &cfg.hidden_dims, cfg.activation, cfg.seed);
    let mut grads = Gradients::zeros_like(&model);
    let mut opt = AdamW::new(model.param_count(), cfg.weight_decay);
    let min_lr = cfg.learning_rate / cfg.min_lr_divisor;

    let mut report = TrainReport {
        n_train_pairs: pairs.len(),
        n_val_pairs: val_pairs.len(),
        ..TrainReport::default()
    };
    let mut best: Option<(f64, usize, ScorerModel)> = None;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.learning_rate, min_lr, epoch, cfg.epochs);
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            grads.zero();
            let scale = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let (we, le) = resolved[idx];
                let (zw, tw) = model.forward_trace(we).expect("dims prevalidated");
                let (zl, tl) = model.forward_trace(le).expect("dims prevalidated");
                loss_sum += pair_loss(zw, zl, gamma);
                let g = pair_loss_grad(zw, zl, gamma) * scale;
                model.backward(&tw, g, &mut grads);
                model.backward(&tl, -g, &mut grads);
            }
            let grad_iter = grads
                .layers
                .iter()
                .flat_map(|l| l.w.iter().chain(l.b.iter()));
            opt.step(lr, model.params_mut(), grad_iter);
        }
        let train_loss = loss_sum / pairs.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }

        let (val_opa, val_ca) = pair_metrics(&model, val_pairs, &val_resolved);
        if let Some(opa) = val_opa {
            let improved = match &best {
                Some((best_opa, _, _)) => opa > *best_opa,
                None => true,
            };
            if improved {
                best = Some((opa, epoch, model.clone()));
            }
        }
        report.rows.push(EpochRow {
            epoch,
            train_loss,
            val_opa,
            val_ca,
            lr,
        });
    }

    if let Some((_, epoch, best_model)) = best {
        report.best_epoch = Some(epoch);
        Ok((best_model, report))
    } else {
        Ok((model, report))
    }
}

/// Compare analytic gradients of the pair loss against central finite
/// differences for every parameter; returns the maximum relative error.
pub fn grad_check(
    model: &ScorerModel,
    samples: &[(Vec<f64>, Vec<f64>)],
    gamma: f64,
    epsilon: f64,
) -> f64 {
    let total_loss = |m: &ScorerModel| -> f64 {
        samples
            .iter()
            .map(|(w, l)| {
                let zw = m.forward_logit(w).expect("dim");
                let zl = m.forward_logit(l).expect("dim");
                pair_loss(zw, zl, gamma)
            })
            .sum()
    };

    let mut grads = Gradients::zeros_like(model);
    for (w, l) in samples {
        let (zw, tw) = model.forward_trace(w).expect("dim");
        let (zl, tl) = model.forward_trace(l).expect("dim");
        let g = pair_loss_grad(zw, zl, gamma);
        model.backward(&tw, g, &mut grads);
        model.backward(&tl, -g, &mut grads);
    }
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()))
        .copied()
        .collect();

    let mut probe = model.clone();
    let n = probe.param_count();
    let mut max_rel = 0.0f64;
    for k in 0..n {
        let orig = {
            let p = probe.params_mut().nth(k).expect("in range");
            let orig = *p;
            *p = orig + epsilon;
            orig
        };
        let plus = total_loss(&probe);
        *probe.params_mut().nth(k).expect("in range") = orig - epsilon;
        let minus = total_loss(&probe);
        *probe.params_mut().nth(k).expect("in range") = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        // The floor keeps central-difference rounding noise (~|L|·1e-11 at
        // ε = 1e-5) from registering as relative error on near-zero
        // gradients.
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max((analytic[k] - numeric).abs() / denom);
    }
    max_rel
}
