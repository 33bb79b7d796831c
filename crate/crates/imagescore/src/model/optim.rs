//! AdamW with decoupled weight decay, plus the cosine annealing schedule.

/// Cosine-annealed learning rate for epoch `epoch` of `total_epochs`:
/// starts at `lr_max`, ends at `lr_min`.
pub fn cosine_lr(lr_max: f64, lr_min: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs <= 1 {
        return lr_max;
    }
    let t = epoch as f64 / (total_epochs - 1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// AdamW over a flat parameter vector. Weight decay is decoupled from the
/// adaptive step, applied directly to the parameters.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One update step. `params` and `grads` must both have the length the
    /// optimizer was built with.
    pub fn step<'a, P, G>(&mut self, lr: f64, params: P, grads: G)
    where
        P: Iterator<Item = &'a mut f64>,
        G: Iterator<Item = &'a f64>,
    {
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0usize;
        for (p, g) in params.zip(grads) {
            *p -= lr * self.weight_decay * *p;
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            k += 1;
        }
        debug_assert_eq!(k, self.m.len(), "param/grad length mismatch");
    }
}
