//! LSTD-Q evaluation of the two constant policies from logged days.
//!
//! Features are `e_m ⊗ e_A ⊗ φ(O)`: one block per interval and action, so a
//! day is a finite-horizon problem that terminates after interval `M`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Observation, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::reciprocal_condition;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstdConfig {
    pub discount: f64,
    /// Added to the diagonal when the system is ill-conditioned.
    pub ridge: f64,
    /// Reciprocal condition number below which the ridge is applied.
    pub rcond_threshold: f64,
}

impl Default for LstdConfig {
    fn default() -> Self {
        LstdConfig { discount: 1.0, ridge: 1e-6, rcond_threshold: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstdEstimate {
    pub value: f64,
    pub ridge_applied: bool,
}

/// Default observation features: intercept plus raw coordinates.
pub fn affine_features(o: &Observation) -> Vec<f64> {
    std::iter::once(1.0).chain(o.values().iter().copied()).collect()
}

struct Layout {
    intervals: usize,
    k: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        self.intervals * 2 * self.k
    }

    fn write(&self, m: usize, a: Action, phi: &[f64], out: &mut DVector<f64>) {
        let start = (m * 2 + a.index()) * self.k;
        for (j, v) in phi.iter().enumerate() {
            out[start + j] = *v;
        }
    }
}

/// Per-step value difference between the all-(+1) and all-(−1) policies,
/// averaged over the observed day-start observations.
///
/// `Q^a(m, O, A)` is fitted by LSTD-Q on complete days; the day value
/// `Q^a(1, O_1, a)` is divided by `Σ_{j<M} discount^j` to put it per step.
pub fn lstd_estimate(
    traj: &Trajectory,
    feature_map: &dyn Fn(&Observation) -> Vec<f64>,
    config: &LstdConfig,
) -> Result<LstdEstimate> {
    if !(0.0..=1.0).contains(&config.discount) {
        return Err(Error::invalid(format!("LSTD discount {} outside [0, 1]", config.discount)));
    }
    let mm = traj.intervals_per_day();
    let days = traj.complete_days();
    if days == 0 {
        return Err(Error::EmptyPanel);
    }
    let steps = &traj.steps()[..days * mm];
    let feats: Vec<Vec<f64>> = steps.iter().map(|s| feature_map(&s.observation)).collect();
    let k = feats[0].len();
    if let Some(f) = feats.iter().find(|f| f.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: f.len() });
    }
    let layout = Layout { intervals: mm, k };
    let p = layout.dim();

    let mut values = [0.0; 2];
    let mut ridge_applied = false;
    for target in Action::BOTH {
        let mut a_mat = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        let mut psi = DVector::<f64>::zeros(p);
        let mut next = DVector::<f64>::zeros(p);
        for (t, s) in steps.iter().enumerate() {
            let m = t % mm;
            psi.fill(0.0);
            layout.write(m, s.action, &feats[t], &mut psi);
            next.fill(0.0);
            if m + 1 < mm {
                layout.write(m + 1, target, &feats[t + 1], &mut next);
            }
            let diff = &psi - config.discount * &next;
            a_mat.ger(1.0, &psi, &diff, 1.0);
            b.axpy(s.outcome, &psi, 1.0);
        }
        let mut solved = None;
        if reciprocal_condition(&a_mat) >= config.rcond_threshold {
            solved = a_mat.clone().lu().solve(&b);
        }
        let w = match solved {
            Some(w) if w.iter().all(|v| v.is_finite()) => w,
            _ => {
                ridge_applied = true;
                let mut r = a_mat;
                for i in 0..p {
                    r[(i, i)] += config.ridge;
                }
                r.lu()
                    .solve(&b)
                    .filter(|w| w.iter().all(|v| v.is_finite()))
                    .ok_or_else(|| Error::Singular("LSTD system remains singular after ridge".into()))?
            }
        };
        let mut start = DVector::<f64>::zeros(p);
        let mut total = 0.0;
        for day in 0..days {
            start.fill(0.0);
            layout.write(0, target, &feats[day * mm], &mut start);
            total += start.dot(&w);
        }
        values[target.index()] = total / days as f64;
    }
    let horizon: f64 = (0..mm).map(|j| config.discount.powi(j as i32)).sum();
    let value = (values[Action::Treatment.index()] - values[Action::Control.index()]) / horizon;
    Ok(LstdEstimate { value, ridge_applied })
}
