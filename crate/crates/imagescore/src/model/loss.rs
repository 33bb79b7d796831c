//! Pairwise focal loss over two-class softmax logits.
//!
//! For a pair with winner logit `z_w` and loser logit `z_l`, the winner
//! probability under a two-class softmax is `p = σ(z_w − z_l)`, and the
//! focal loss with target "winner" is
//!
//! ```text
//! FL = (1 − p)^γ · (−ln p)
//! ```
//!
//! γ = 0 recovers plain cross-entropy; larger γ down-weights pairs the
//! model already orders confidently.

use crate::util::{logistic, softplus};

/// Focal loss of one (winner, loser) logit pair.
pub fn pair_loss(z_w: f64, z_l: f64, gamma: f64) -> f64 {
    let d = z_w - z_l;
    // q = 1 − p and −ln p, both computed stably from d.
    let q = logistic(-d);
    let neg_ln_p = softplus(-d);
    q.powf(gamma) * neg_ln_p
}

/// Derivative of [`pair_loss`] with respect to `d = z_w − z_l`.
///
/// With `p = σ(d)`, `q = 1 − p`, `m = −ln p`:
/// `dFL/dd = −q^γ · (γ·p·m + q)`.
pub fn pair_loss_grad(z_w: f64, z_l: f64, gamma: f64) -> f64 {
    let d = z_w - z_l;
    let p = logistic(d);
    let q = logistic(-d);
    let m = softplus(-d);
    -q.powf(gamma) * (gamma * p * m + q)
}
