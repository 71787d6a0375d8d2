//! ATE estimators and variance functionals.
//!
//! Actions are coded ±1 throughout, so a direct effect `gamma` contributes
//! `2 * gamma` to the gap between the all-treatment and all-control regimes.

mod dr;
mod lstd;
mod monte_carlo;
mod ols;
mod plugin;
mod switchback;

pub use dr::{
    dr_estimate, dr_variance, neyman_allocation, ConditionalVarianceSpec, NoiseLaw, ObservationKernel, OutcomeMean,
    TabularProcess,
};
pub use lstd::{affine_features, lstd_estimate, LstdConfig, LstdEstimate};
pub use monte_carlo::{ate_monte_carlo, mean_sd, McEstimate};
pub use ols::{daily_ols_ate, fit_ols_per_interval, fit_ols_regression, DailyOlsEstimate, RegressionPanel};
pub use plugin::ate_plugin;
pub use switchback::{burn_in_difference, horvitz_thompson};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of one interval's reward and transition equations.
///
/// The transition block maps `O_m` to `O_{m+1}`; it is unused (zero) on the
/// last interval of a day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub phi: Vec<f64>,
    /// Row-major `d × d` state transition matrix.
    pub transition: Vec<Vec<f64>>,
    /// Action effect on the next observation.
    pub carryover: Vec<f64>,
}

impl IntervalParams {
    pub fn zeros(d: usize) -> Self {
        IntervalParams {
            alpha: 0.0,
            beta: vec![0.0; d],
            gamma: 0.0,
            phi: vec![0.0; d],
            transition: vec![vec![0.0; d]; d],
            carryover: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    fn is_finite(&self) -> bool {
        std::iter::once(self.alpha)
            .chain(std::iter::once(self.gamma))
            .chain(self.beta.iter().copied())
            .chain(self.phi.iter().copied())
            .chain(self.carryover.iter().copied())
            .chain(self.transition.iter().flatten().copied())
            .all(f64::is_finite)
    }
}

/// Per-interval linear model of a day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModelParams {
    pub intervals: Vec<IntervalParams>,
}

impl LinearModelParams {
    pub fn new(intervals: Vec<IntervalParams>) -> Result<Self> {
        let p = LinearModelParams { intervals };
        p.validate()?;
        Ok(p)
    }

    /// Same coefficients for every interval.
    pub fn stationary(intervals_per_day: usize, interval: IntervalParams) -> Result<Self> {
        Self::new(vec![interval; intervals_per_day])
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.intervals.first().ok_or_else(|| Error::invalid("no intervals"))?;
        let d = first.dim();
        for p in &self.intervals {
            let dims = [p.beta.len(), p.phi.len(), p.carryover.len(), p.transition.len()];
            if let Some(&bad) = dims.iter().find(|&&k| k != d) {
                return Err(Error::DimensionMismatch { expected: d, got: bad });
            }
            if let Some(row) = p.transition.iter().find(|r| r.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("linear model coefficient".into()));
            }
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        self.intervals.len()
    }

    pub fn dim(&self) -> usize {
        self.intervals.first().map_or(0, IntervalParams::dim)
    }
}

/// Residuals of the per-interval fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBank {
    /// `reward[i][m]`, n × M.
    pub reward: Vec<Vec<f64>>,
    /// `transition[i][m][k]`, n × (M-1) × d.
    pub transition: Vec<Vec<Vec<f64>>>,
}

impl ResidualBank {
    pub fn n_days(&self) -> usize {
        self.reward.len()
    }

    pub fn intervals_per_day(&self) -> usize {
        self.reward.first().map_or(0, Vec::len)
    }
}

/// Estimated effect with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub value: f64,
    pub method: String,
    pub sample_size: usize,
}
