use serde::{Deserialize, Serialize};

use crate::domain::Action;
use crate::env::{rollout_constant_day, Simulator};
use crate::error::{Error, Result};
use crate::rng::Streams;

/// Monte Carlo ATE with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub n_rollouts: usize,
}

/// Mean over rollouts of the per-step outcome gap between an all-(+1) day
/// and an all-(−1) day.
///
/// The two arms of rollout `i` use independent streams `("mc-treat", i)`
/// and `("mc-control", i)`.
pub fn ate_monte_carlo(env: &dyn Simulator, n_rollouts: usize, streams: &Streams) -> Result<McEstimate> {
    if n_rollouts < 2 {
        return Err(Error::invalid("Monte Carlo ATE needs at least two rollouts for a standard error"));
    }
    let mut gaps = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let treat = rollout_constant_day(env, Action::Treatment, streams.rng("mc-treat", i as u64))?;
        let control = rollout_constant_day(env, Action::Control, streams.rng("mc-control", i as u64))?;
        let t = treat.len() as f64;
        gaps.push((treat.iter().sum::<f64>() - control.iter().sum::<f64>()) / t);
    }
    let (value, sd) = mean_sd(&gaps);
    Ok(McEstimate { value, se: sd / (n_rollouts as f64).sqrt(), n_rollouts })
}

/// Sample mean and (n−1)-denominator standard deviation.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
