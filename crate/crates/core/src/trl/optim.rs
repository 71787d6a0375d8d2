//! AdamW with global-norm clipping, cosine decay and soft target updates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub base_lr: f64,
    /// Steps until the learning rate reaches zero.
    pub horizon: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl AdamW {
    pub fn new(base_lr: f64, horizon: usize, weight_decay: f64, clip_norm: f64) -> Self {
        AdamW { base_lr, horizon, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, clip_norm }
    }
}

/// Online and target parameters with the optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub online: Vec<f64>,
    pub target: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    /// Learning rate used by the most recent step.
    pub lr: f64,
}

impl TrainState {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        TrainState { target: params.clone(), online: params, m: vec![0.0; n], v: vec![0.0; n], step: 0, lr: 0.0 }
    }
}

/// `base · (1 + cos(π · step / horizon)) / 2`, zero from `horizon` on.
pub fn cosine_lr(base: f64, step: usize, horizon: usize) -> f64 {
    if horizon == 0 || step >= horizon {
        return 0.0;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / horizon as f64).cos())
}

/// Rescales `grads` to norm at most `max_norm`; returns the original norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One clipped AdamW step on the online parameters.
pub fn optimizer_step(state: &mut TrainState, grads: &mut [f64], opt: &AdamW) {
    clip_global_norm(grads, opt.clip_norm);
    let lr = cosine_lr(opt.base_lr, state.step, opt.horizon);
    state.step += 1;
    state.lr = lr;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - opt.beta1.powi(t), 1.0 - opt.beta2.powi(t));
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
        state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
        let update = (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + opt.eps);
        state.online[i] -= lr * (update + opt.weight_decay * state.online[i]);
    }
}

/// `target ← (1 − τ) target + τ online`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        let mut g = vec![6.0, 8.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 10.0);
        assert!((g.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-15);
        let mut small = vec![0.3, 0.4];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let opt = AdamW::new(0.1, 100, 0.01, 1.0);
        let mut s = TrainState::new(vec![1.0, -2.0]);
        optimizer_step(&mut s, &mut [0.0, 0.0], &opt);
        assert!((s.online[0] - (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        assert!((s.online[1] - (-2.0 + 2.0 * 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0.5, 0, 10), 0.5);
        assert!((cosine_lr(0.5, 5, 10) - 0.25).abs() < 1e-15);
        assert_eq!(cosine_lr(0.5, 10, 10), 0.0);
        let opt = AdamW::new(0.1, 3, 0.01, 1.0);
        let mut s = TrainState::new(vec![1.0]);
        for _ in 0..3 {
            optimizer_step(&mut s, &mut [1.0], &opt);
        }
        let frozen = s.online.clone();
        optimizer_step(&mut s, &mut [5.0], &opt);
        assert_eq!(s.online, frozen);
        assert_eq!(s.lr, 0.0);
    }

    #[test]
    fn soft_update_examples() {
        let online = vec![1.0, 2.0];
        let mut t = vec![0.0, 0.0];
        soft_update(&mut t, &online, 1.0);
        assert_eq!(t, online);
        let mut t = vec![3.0, 4.0];
        soft_update(&mut t, &online, 0.0);
        assert_eq!(t, vec![3.0, 4.0]);
        // Two steps of τ equal one step of 1 − (1 − τ)².
        let (mut a, mut b) = (vec![3.0, -1.0], vec![3.0, -1.0]);
        soft_update(&mut a, &online, 0.005);
        soft_update(&mut a, &online, 0.005);
        soft_update(&mut b, &online, 1.0 - 0.995f64.powi(2));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
