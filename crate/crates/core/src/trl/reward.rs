use std::sync::Arc;

use crate::domain::Trajectory;
use crate::error::{Error, Result};
use crate::estimators::{daily_ols_ate, lstd_estimate, LstdConfig};

use super::{RewardMode, TrlConfig};

/// Proxy reward at step `t` (1-based) of `total` steps with `m` intervals
/// per day. Day-end mode pays `−α^{n−i}(est − ate)²` at the end of day `i`
/// and zero elsewhere; per-step mode pays `−α^{T−t}(est − ate)²`. Steps in
/// the first `warmup_days` days pay zero.
#[allow(clippy::too_many_arguments)]
pub fn proxy_reward(
    est: f64,
    ate_mc: f64,
    alpha: f64,
    t: usize,
    total: usize,
    mode: RewardMode,
    warmup_days: usize,
    m: usize,
) -> f64 {
    let day = t.div_ceil(m);
    if day <= warmup_days {
        return 0.0;
    }
    let err2 = (est - ate_mc).powi(2);
    match mode {
        RewardMode::PerStep => -alpha.powi((total - t) as i32) * err2,
        RewardMode::DayEnd if t % m == 0 => -alpha.powi((total / m - day) as i32) * err2,
        RewardMode::DayEnd => 0.0,
    }
}

/// Per-step rewards of a finished episode. Rewards may only look at the
/// prefix up to their own step.
pub trait RewardFn: Send + Sync {
    fn rewards(&self, traj: &Trajectory) -> Result<Vec<f64>>;
}

pub type RunningEstimator = Arc<dyn Fn(&Trajectory) -> Result<f64> + Send + Sync>;

/// Squared error of a running estimate against the Monte Carlo truth.
#[derive(Clone)]
pub struct ProxyMseReward {
    estimator: RunningEstimator,
    ate_mc: f64,
    alpha: f64,
    mode: RewardMode,
    warmup_days: usize,
}

impl ProxyMseReward {
    /// Fails when the ground truth is missing or not finite.
    pub fn new(estimator: RunningEstimator, ate_mc: Option<f64>, config: &TrlConfig) -> Result<Self> {
        let ate_mc = ate_mc.ok_or_else(|| Error::Config("training needs a Monte Carlo ATE; run mc-truth first".into()))?;
        if !ate_mc.is_finite() {
            return Err(Error::NonFinite("Monte Carlo ATE".into()));
        }
        Ok(ProxyMseReward {
            estimator,
            ate_mc,
            alpha: config.alpha,
            mode: config.reward_mode,
            warmup_days: config.warmup_days,
        })
    }

    pub fn daily_ols(ate_mc: Option<f64>, config: &TrlConfig) -> Result<Self> {
        Self::new(Arc::new(|t: &Trajectory| daily_ols_ate(t).map(|e| e.value)), ate_mc, config)
    }

    pub fn lstd(ate_mc: Option<f64>, config: &TrlConfig, lstd: LstdConfig) -> Result<Self> {
        let est = move |t: &Trajectory| {
            lstd_estimate(t, &crate::estimators::affine_features, &lstd).map(|e| e.value)
        };
        Self::new(Arc::new(est), ate_mc, config)
    }
}

impl RewardFn for ProxyMseReward {
    fn rewards(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let (total, m) = (traj.len(), traj.intervals_per_day());
        let mut out = vec![0.0; total];
        let mut cached: Option<(usize, f64)> = None;
        for t in 1..=total {
            if t.div_ceil(m) <= self.warmup_days || (self.mode == RewardMode::DayEnd && t % m != 0) {
                continue;
            }
            // Estimates use completed days only.
            let days = t / m;
            if days == 0 {
                continue;
            }
            let est = match cached {
                Some((d, v)) if d == days => v,
                _ => {
                    let v = (self.estimator)(&traj.prefix_days(days))?;
                    cached = Some((days, v));
                    v
                }
            };
            out[t - 1] = proxy_reward(est, self.ate_mc, self.alpha, t, total, self.mode, self.warmup_days, m);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(proxy_reward(0.3, 0.3, 0.8, 40, 40, RewardMode::DayEnd, 0, 4), 0.0);
        assert!((proxy_reward(0.1, 0.0, 0.8, 40, 40, RewardMode::PerStep, 0, 4) + 0.01).abs() < 1e-15);
        // n = 10 days, i = n − 2 = 8 ends at t = 32.
        assert!((proxy_reward(0.2, 0.0, 0.5, 32, 40, RewardMode::DayEnd, 0, 4) + 0.01).abs() < 1e-15);
        assert_eq!(proxy_reward(0.2, 0.0, 0.5, 31, 40, RewardMode::DayEnd, 0, 4), 0.0);
        assert_eq!(proxy_reward(1.0, 0.0, 0.5, 28, 40, RewardMode::DayEnd, 7, 4), 0.0);
        assert_eq!(proxy_reward(1.0, 0.0, 0.5, 29, 40, RewardMode::PerStep, 7, 4), -0.5f64.powi(11));
    }

    #[test]
    fn missing_truth_is_an_error() {
        assert!(ProxyMseReward::daily_ols(None, &TrlConfig::default()).is_err());
        assert!(ProxyMseReward::daily_ols(Some(f64::NAN), &TrlConfig::default()).is_err());
    }
}
