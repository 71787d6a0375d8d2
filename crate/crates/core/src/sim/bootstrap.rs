//! Wild-bootstrap simulator built from an A/A panel.
//!
//! Per-interval linear models are fitted to the A/A days, treatment effects
//! are injected proportionally to interval means, and each simulated day
//! replays the residuals of one resampled source day scaled by a single
//! Gaussian multiplier `ξ`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Observation};
use crate::env::{DaySim, Simulator};
use crate::error::{Error, Result};
use crate::estimators::{ate_monte_carlo, McEstimate, ate_plugin, fit_ols_regression, LinearModelParams, RegressionPanel, ResidualBank};
use crate::rng::{Rng, Streams};

/// A/A panel: no treatment variation, actions recorded as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AADataset {
    panel: RegressionPanel,
    pub columns: Vec<String>,
}

impl AADataset {
    /// `obs[(i * M + m) * d + k]`, `outcome[i * M + m]`.
    pub fn new(n_days: usize, intervals: usize, dim: usize, obs: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        if obs.iter().chain(&outcome).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("A/A panel value".into()));
        }
        let cells = n_days * intervals;
        let panel = RegressionPanel::new(n_days, intervals, dim, obs, outcome, vec![0.0; cells])?;
        let mut columns = vec!["day".to_string(), "interval".to_string()];
        columns.extend((1..=dim).map(|k| format!("obs_{k}")));
        columns.push("outcome".into());
        Ok(AADataset { panel, columns })
    }

    pub fn panel(&self) -> &RegressionPanel {
        &self.panel
    }

    pub fn n_days(&self) -> usize {
        self.panel.n_days()
    }

    pub fn intervals(&self) -> usize {
        self.panel.intervals()
    }

    pub fn dim(&self) -> usize {
        self.panel.dim()
    }

    pub fn obs(&self, day: usize, interval: usize) -> &[f64] {
        self.panel.obs(day, interval)
    }

    pub fn outcome(&self, day: usize, interval: usize) -> f64 {
        self.panel.outcome(day, interval)
    }

    pub fn mean_outcome(&self) -> f64 {
        let (n, m) = (self.n_days(), self.intervals());
        let total: f64 = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| self.outcome(i, j)).sum();
        total / (n * m) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for i in 0..self.n_days() {
            for m in 0..self.intervals() {
                let mut row = vec![(i + 1).to_string(), (m + 1).to_string()];
                row.extend(self.obs(i, m).iter().map(|v| v.to_string()));
                row.push(self.outcome(i, m).to_string());
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `day, interval, obs_1, …, obs_d, outcome` with 1-based day and
/// interval labels forming a complete grid.
pub fn load_aa_csv(path: &Path) -> Result<AADataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (day_col, int_col, out_col) = match (col("day"), col("interval"), col("outcome")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Data("header must contain day, interval and outcome".into())),
    };
    let obs_cols: Vec<usize> = (1..).map_while(|k| col(&format!("obs_{k}"))).collect();
    if obs_cols.is_empty() {
        return Err(Error::Data("header must contain obs_1".into()));
    }
    let d = obs_cols.len();
    let mut cells: BTreeMap<(usize, usize), (Vec<f64>, f64)> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |c: usize| -> Result<&str> {
            rec.get(c).map(str::trim).ok_or_else(|| Error::Data(format!("line {line}: missing field {}", c + 1)))
        };
        let index = |c: usize, what: &str| -> Result<usize> {
            let s = field(c)?;
            s.parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::Data(format!("line {line}: {what} `{s}` is not a positive integer")))
        };
        let number = |c: usize| -> Result<f64> {
            let s = field(c)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("line {line}: `{s}` in column {} is not numeric", headers[c].trim())))
        };
        let key = (index(day_col, "day")?, index(int_col, "interval")?);
        let obs = obs_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        let y = number(out_col)?;
        if cells.insert(key, (obs, y)).is_some() {
            return Err(Error::Data(format!("line {line}: duplicate cell day {} interval {}", key.0, key.1)));
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let n = cells.keys().map(|k| k.0).max().unwrap_or(0);
    let m = cells.keys().map(|k| k.1).max().unwrap_or(0);
    let mut obs = Vec::with_capacity(n * m * d);
    let mut outcome = Vec::with_capacity(n * m);
    for i in 1..=n {
        for j in 1..=m {
            let (o, y) = cells
                .get(&(i, j))
                .ok_or_else(|| Error::Data(format!("missing cell: day {i} interval {j}")))?;
            obs.extend_from_slice(o);
            outcome.push(*y);
        }
    }
    AADataset::new(n, m, d, obs, outcome)
}

/// Seasonal two-dimensional stand-in for an A/A panel.
///
/// Observations (demand-like, supply-like) follow a daily sine profile plus
/// a cross-coupled AR(1) deviation with correlated innovations. The outcome
/// is linear in them with a shared day effect and idiosyncratic noise, which
/// gives positive within-day residual correlation.
pub fn synth_aa_generator(n: usize, intervals: usize, rng: &mut Rng) -> Result<AADataset> {
    if n < 10 {
        return Err(Error::invalid("synthetic A/A panel needs at least 10 days"));
    }
    if intervals == 0 {
        return Err(Error::invalid("intervals must be positive"));
    }
    let z = |rng: &mut Rng| -> f64 { rng.sample(StandardNormal) };
    let mut obs = Vec::with_capacity(n * intervals * 2);
    let mut outcome = Vec::with_capacity(n * intervals);
    for _ in 0..n {
        let day_effect = 0.4 * z(rng);
        let (a, b) = (z(rng), z(rng));
        let mut dev = [1.2 * a, 1.2 * (0.6 * a + 0.8 * b)];
        for m in 0..intervals {
            let season = (2.0 * std::f64::consts::PI * m as f64 / intervals as f64).sin();
            let o = [10.0 + 3.0 * season + dev[0], 8.0 + 2.0 * season + dev[1]];
            obs.extend_from_slice(&o);
            outcome.push(2.0 + 0.8 * o[0] + 0.4 * o[1] + day_effect + 0.5 * z(rng));
            let (a, b) = (z(rng), z(rng));
            let e = [a, 0.5 * a + 0.75f64.sqrt() * b];
            dev = [0.6 * dev[0] + 0.2 * dev[1] + e[0], 0.3 * dev[0] + 0.5 * dev[1] + e[1]];
        }
    }
    AADataset::new(n, intervals, 2, obs, outcome)
}

/// Per-interval OLS on the A/A panel; effect coefficients are zero.
pub fn fit_and_bank(dataset: &AADataset) -> Result<(LinearModelParams, ResidualBank)> {
    fit_ols_regression(dataset.panel())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedEffect {
    pub params: LinearModelParams,
    pub ate: f64,
    /// Mean A/A outcome per interval.
    pub baseline: f64,
    /// `ate / baseline`.
    pub ratio: f64,
}

/// Sets `γ_m = δ₁ · mean_i Y_{i,m}` and `Γ_m = δ₂ · mean_i O_{i,m}`.
pub fn inject_effect(params: &LinearModelParams, dataset: &AADataset, delta_1: f64, delta_2: f64) -> Result<InjectedEffect> {
    let (n, mm, d) = (dataset.n_days(), dataset.intervals(), dataset.dim());
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    if params.intervals_per_day() != mm || params.dim() != d {
        return Err(Error::DimensionMismatch { expected: mm, got: params.intervals_per_day() });
    }
    let mut out = params.clone();
    for (m, p) in out.intervals.iter_mut().enumerate() {
        p.gamma = delta_1 * (0..n).map(|i| dataset.outcome(i, m)).sum::<f64>() / n as f64;
        p.carryover = (0..d).map(|k| delta_2 * (0..n).map(|i| dataset.obs(i, m)[k]).sum::<f64>() / n as f64).collect();
        if m + 1 == mm {
            p.carryover = vec![0.0; d];
        }
    }
    let ate = ate_plugin(&out);
    let baseline = dataset.mean_outcome();
    Ok(InjectedEffect { params: out, ate, baseline, ratio: ate / baseline })
}

/// Largest eigenvalue modulus over the intervals' transition matrices,
/// skipping the unused last block.
pub fn spectral_radius(params: &LinearModelParams) -> f64 {
    let used = params.intervals_per_day().saturating_sub(1).max(1);
    params.intervals[..used]
        .iter()
        .map(|p| {
            let d = p.dim();
            let m = DMatrix::from_fn(d, d, |r, c| p.transition[r][c]);
            m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Spectral radius above which a rescaled system is flagged as explosive.
pub const RADIUS_WARNING: f64 = 1.5;

/// Multiplies the off-diagonal transition entries by `phi_coef`.
pub fn scale_cross_correlation(params: &LinearModelParams, phi_coef: f64) -> Result<LinearModelParams> {
    if !(phi_coef > 0.0 && phi_coef.is_finite()) {
        return Err(Error::invalid(format!("phi_coef must be positive, got {phi_coef}")));
    }
    let mut out = params.clone();
    for p in &mut out.intervals {
        for (r, row) in p.transition.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                if r != c {
                    *v *= phi_coef;
                }
            }
        }
    }
    let radius = spectral_radius(&out);
    if radius >= RADIUS_WARNING {
        log::warn!("phi_coef {phi_coef} gives transition spectral radius {radius:.3}; trajectories may blow up");
    }
    Ok(out)
}

/// Residual bank after a correlation transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedBank {
    pub bank: ResidualBank,
    /// Eigenvalues were clipped to restore positive definiteness.
    pub repaired: bool,
}

const EIG_FLOOR: f64 = 1e-10;

/// Clips eigenvalues at the floor and restores the original diagonal.
fn psd_repair(c: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(c.clone());
    if eig.eigenvalues.min() >= EIG_FLOOR {
        return (c.clone(), false);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(EIG_FLOOR));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let s = DVector::from_fn(c.nrows(), |i, _| (c[(i, i)] / r[(i, i)]).sqrt());
    let out = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| s[i] * r[(i, j)] * s[j]);
    (out, true)
}

fn cholesky(c: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if let Some(l) = c.clone().cholesky() {
        return Ok((l.l(), false));
    }
    let (fixed, _) = psd_repair(c);
    fixed
        .cholesky()
        .map(|l| (l.l(), true))
        .ok_or_else(|| Error::Singular("residual covariance not factorizable after repair".into()))
}

/// Target correlation `R_e(ρ)`: `(1+ρ)R₀ − ρI` for `ρ ≤ 0` and
/// `(1−ρ)R₀ + ρR₁` for `ρ ≥ 0`, with `R₁` having 0.6 off the diagonal.
pub fn target_correlation(r0: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let m = r0.nrows();
    DMatrix::from_fn(m, m, |i, j| {
        let base = r0[(i, j)];
        let eye = if i == j { 1.0 } else { 0.0 };
        let r1 = if i == j { 1.0 } else { 0.6 };
        if rho <= 0.0 {
            (1.0 + rho) * base - rho * eye
        } else {
            (1.0 - rho) * base + rho * r1
        }
    })
}

/// Empirical `M × M` covariance of the reward residuals (divisor `n`).
pub fn residual_covariance(bank: &ResidualBank) -> DMatrix<f64> {
    let n = bank.n_days();
    let m = bank.intervals_per_day();
    let e = DMatrix::from_fn(n, m, |i, j| bank.reward[i][j]);
    let means: Vec<f64> = (0..m).map(|j| e.column(j).mean()).collect();
    DMatrix::from_fn(m, m, |a, b| {
        (0..n).map(|i| (e[(i, a)] - means[a]) * (e[(i, b)] - means[b])).sum::<f64>() / n as f64
    })
}

pub fn covariance_to_correlation(c: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt())
}

/// Maps each day's reward residuals through `L(ρ) L₀⁻¹` so their empirical
/// covariance becomes `D^{1/2} R_e(ρ) D^{1/2}` with the marginal variances
/// `D` unchanged. Transition residuals are left as they are.
pub fn residual_correlation_family(bank: &ResidualBank, rho: f64) -> Result<CorrelatedBank> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho {rho} outside [-1, 1]")));
    }
    if rho == 0.0 {
        return Ok(CorrelatedBank { bank: bank.clone(), repaired: false });
    }
    let c0 = residual_covariance(bank);
    let m = c0.nrows();
    if (0..m).any(|i| c0[(i, i)] <= 0.0) {
        return Err(Error::Singular("an interval has zero residual variance".into()));
    }
    let r0 = covariance_to_correlation(&c0);
    let sd = DVector::from_fn(m, |i, _| c0[(i, i)].sqrt());
    let r = target_correlation(&r0, rho);
    let target = DMatrix::from_fn(m, m, |i, j| sd[i] * r[(i, j)] * sd[j]);
    let (target, repaired_target) = psd_repair(&target);
    let (l_target, _) = cholesky(&target)?;
    let (l0, repaired_source) = cholesky(&c0)?;
    let l0_inv = l0
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| Error::Singular("residual Cholesky factor".into()))?;
    let a = l_target * l0_inv;
    let n = bank.n_days();
    let means: Vec<f64> = (0..m).map(|j| (0..n).map(|i| bank.reward[i][j]).sum::<f64>() / n as f64).collect();
    let reward = bank
        .reward
        .iter()
        .map(|row| {
            let centered = DVector::from_fn(m, |j, _| row[j] - means[j]);
            let moved = &a * centered;
            (0..m).map(|j| moved[j] + means[j]).collect()
        })
        .collect();
    Ok(CorrelatedBank {
        bank: ResidualBank { reward, transition: bank.transition.clone() },
        repaired: repaired_target || repaired_source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub delta_1: f64,
    pub delta_2: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub phi_coef: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { delta_1: 0.0, delta_2: 0.0, rho: 0.0, phi_coef: 1.0 }
    }
}

/// Fitted bootstrap world: model, residual bank and the source days'
/// initial observations.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapEnv {
    params: LinearModelParams,
    bank: ResidualBank,
    initial: Vec<Vec<f64>>,
    effect: InjectedEffect,
    repaired: bool,
    xi_override: Option<f64>,
}

impl BootstrapEnv {
    /// Fit, inject effects, rescale cross terms and reshape residual
    /// correlation, in that order.
    pub fn build(dataset: &AADataset, config: &BootstrapConfig) -> Result<Self> {
        let (fitted, bank) = fit_and_bank(dataset)?;
        let effect = inject_effect(&fitted, dataset, config.delta_1, config.delta_2)?;
        let params = scale_cross_correlation(&effect.params, config.phi_coef)?;
        let correlated = residual_correlation_family(&bank, config.rho)?;
        let initial = (0..dataset.n_days()).map(|i| dataset.obs(i, 0).to_vec()).collect();
        Ok(BootstrapEnv { params, bank: correlated.bank, initial, effect, repaired: correlated.repaired, xi_override: None })
    }

    pub fn from_parts(params: LinearModelParams, bank: ResidualBank, initial: Vec<Vec<f64>>) -> Result<Self> {
        params.validate()?;
        if bank.n_days() != initial.len() || bank.n_days() == 0 {
            return Err(Error::invalid("residual bank and initial observations disagree on the number of days"));
        }
        if bank.intervals_per_day() != params.intervals_per_day() {
            return Err(Error::DimensionMismatch { expected: params.intervals_per_day(), got: bank.intervals_per_day() });
        }
        let ate = ate_plugin(&params);
        let effect = InjectedEffect { params: params.clone(), ate, baseline: f64::NAN, ratio: f64::NAN };
        Ok(BootstrapEnv { params, bank, initial, effect, repaired: false, xi_override: None })
    }

    /// Fixes every multiplier `ξ` (the source day is still resampled).
    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi_override = Some(xi);
        self
    }

    pub fn params(&self) -> &LinearModelParams {
        &self.params
    }

    pub fn bank(&self) -> &ResidualBank {
        &self.bank
    }

    pub fn effect(&self) -> &InjectedEffect {
        &self.effect
    }

    pub fn psd_repaired(&self) -> bool {
        self.repaired
    }

    pub fn true_ate(&self) -> f64 {
        ate_plugin(&self.params)
    }

    /// Draws the resampled source day and multiplier from a day stream.
    pub fn draw_day(&self, rng: &mut Rng) -> (usize, f64) {
        let source = rng.random_range(0..self.initial.len());
        let xi: f64 = rng.sample(StandardNormal);
        (source, self.xi_override.unwrap_or(xi))
    }
}

/// Result of [`calibrate_delta`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Common value of `delta_1` and `delta_2`.
    pub delta: f64,
    pub ate_mc: McEstimate,
    pub baseline: f64,
    pub ratio: f64,
}

/// Bisection on `delta_1 = delta_2` until the Monte Carlo ATE over the A/A
/// baseline hits `target_ratio` within `tol`. Every evaluation reuses the
/// same rollout streams, so the ratio is a deterministic function of delta.
pub fn calibrate_delta(
    dataset: &AADataset,
    base: &BootstrapConfig,
    target_ratio: f64,
    rollouts: usize,
    streams: &Streams,
    tol: f64,
) -> Result<Calibration> {
    let baseline = dataset.mean_outcome();
    if baseline == 0.0 || !target_ratio.is_finite() {
        return Err(Error::invalid("calibration needs a nonzero baseline and a finite target"));
    }
    let eval = |delta: f64| -> Result<Calibration> {
        let env = BootstrapEnv::build(dataset, &BootstrapConfig { delta_1: delta, delta_2: delta, ..base.clone() })?;
        let mc = ate_monte_carlo(&env, rollouts, streams)?;
        Ok(Calibration { delta, ate_mc: mc, baseline, ratio: mc.value / baseline })
    };
    let sign = target_ratio.signum();
    let (mut lo, mut hi) = (0.0, 0.01 * sign);
    let mut at_hi = eval(hi)?;
    let mut expansions = 0;
    while (at_hi.ratio - target_ratio) * sign < 0.0 {
        lo = hi;
        hi *= 2.0;
        at_hi = eval(hi)?;
        expansions += 1;
        if expansions > 30 {
            return Err(Error::invalid(format!("ratio {target_ratio} not reachable by scaling delta")));
        }
    }
    let mut best = at_hi;
    for _ in 0..60 {
        if (best.ratio - target_ratio).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let at = eval(mid)?;
        if (at.ratio - target_ratio) * sign < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = at;
    }
    Ok(best)
}

impl Simulator for BootstrapEnv {
    fn name(&self) -> String {
        "bootstrap".into()
    }

    fn obs_dim(&self) -> usize {
        self.params.dim()
    }

    fn intervals_per_day(&self) -> usize {
        self.params.intervals_per_day()
    }

    fn start_day(&self, mut rng: Rng) -> Box<dyn DaySim + '_> {
        let (source, xi) = self.draw_day(&mut rng);
        Box::new(BootstrapDay { env: self, source, xi, obs: self.initial[source].clone(), interval: 0 })
    }
}

pub struct BootstrapDay<'a> {
    env: &'a BootstrapEnv,
    source: usize,
    xi: f64,
    obs: Vec<f64>,
    interval: usize,
}

impl BootstrapDay<'_> {
    pub fn source(&self) -> usize {
        self.source
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }
}

impl DaySim for BootstrapDay<'_> {
    fn observation(&self) -> Observation {
        Observation::new(self.obs.clone()).expect("finite state")
    }

    fn step(&mut self, action: Action) -> Result<f64> {
        let mm = self.env.intervals_per_day();
        let m = self.interval;
        if m >= mm {
            return Err(Error::DayTerminated(m));
        }
        let p = &self.env.params.intervals[m];
        let a = action.sign();
        let o = &self.obs;
        let dot: f64 = p.beta.iter().zip(o).map(|(b, x)| b * x).sum();
        let y = p.alpha + dot + p.gamma * a + self.xi * self.env.bank.reward[self.source][m];
        if m + 1 < mm {
            let resid = &self.env.bank.transition[self.source][m];
            self.obs = (0..o.len())
                .map(|r| {
                    let row: f64 = p.transition[r].iter().zip(o).map(|(t, x)| t * x).sum();
                    p.phi[r] + row + p.carryover[r] * a + self.xi * resid[r]
                })
                .collect();
        }
        if !y.is_finite() || self.obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("bootstrap state at interval {}", m + 1)));
        }
        self.interval += 1;
        Ok(y)
    }

    fn steps_taken(&self) -> usize {
        self.interval
    }

    fn is_done(&self) -> bool {
        self.interval >= self.env.intervals_per_day()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn dataset(n: usize, m: usize) -> AADataset {
        synth_aa_generator(n, m, &mut Streams::new(21).rng("aa", 0)).unwrap()
    }

    #[test]
    fn injection_examples() {
        let ds = dataset(30, 6);
        let (params, _) = fit_and_bank(&ds).unwrap();
        let zero = inject_effect(&params, &ds, 0.0, 0.0).unwrap();
        assert!(zero.params.intervals.iter().all(|p| p.gamma == 0.0 && p.carryover.iter().all(|&g| g == 0.0)));
        assert_eq!(zero.ate, 0.0);

        let n = 12;
        let flat = AADataset::new(n, 3, 2, (0..n * 3 * 2).map(|i| i as f64 % 5.0).collect(), vec![10.0; n * 3]).unwrap();
        let (p, _) = fit_and_bank(&flat).unwrap();
        let inj = inject_effect(&p, &flat, 0.01, 0.0).unwrap();
        assert!(inj.params.intervals.iter().all(|q| (q.gamma - 0.1).abs() < 1e-12));
    }

    #[test]
    fn scaling_examples() {
        let ds = dataset(30, 4);
        let (params, _) = fit_and_bank(&ds).unwrap();
        assert_eq!(scale_cross_correlation(&params, 1.0).unwrap(), params);
        let q = scale_cross_correlation(&params, 0.25).unwrap();
        for (a, b) in params.intervals.iter().zip(&q.intervals) {
            assert_eq!(b.transition[0][0], a.transition[0][0]);
            assert_eq!(b.transition[1][1], a.transition[1][1]);
            assert_eq!(b.transition[0][1], 0.25 * a.transition[0][1]);
            assert_eq!(b.transition[1][0], 0.25 * a.transition[1][0]);
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.carryover, b.carryover);
        }
        assert!(scale_cross_correlation(&params, 0.0).is_err());
    }

    #[test]
    fn correlation_family_endpoints() {
        let ds = dataset(200, 6);
        let (_, bank) = fit_and_bank(&ds).unwrap();
        let c0 = residual_covariance(&bank);
        assert_eq!(residual_correlation_family(&bank, 0.0).unwrap().bank, bank);
        let ind = residual_correlation_family(&bank, -1.0).unwrap();
        let r = covariance_to_correlation(&residual_covariance(&ind.bank));
        assert!((r - DMatrix::identity(6, 6)).abs().max() < 1e-8);
        for rho in [-0.8, -0.4, 0.4, 0.8, 1.0] {
            let c = residual_covariance(&residual_correlation_family(&bank, rho).unwrap().bank);
            for i in 0..6 {
                assert!((c[(i, i)] - c0[(i, i)]).abs() < 1e-10 * c0[(i, i)].max(1.0));
            }
            let expected = target_correlation(&covariance_to_correlation(&c0), rho);
            assert!((covariance_to_correlation(&c) - expected).abs().max() < 1e-8);
        }
        assert!(residual_correlation_family(&bank, 1.5).is_err());
    }

    #[test]
    fn psd_repair_keeps_diagonal() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.99, -0.99, 0.99, 1.0, 0.99, -0.99, 0.99, 1.0]);
        let (r, repaired) = psd_repair(&c);
        assert!(repaired);
        assert!(SymmetricEigen::new(r.clone()).eigenvalues.min() > 0.0);
        for i in 0..3 {
            assert!((r[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_multiplier_reproduces_fitted_means() {
        let ds = dataset(20, 4);
        let env = BootstrapEnv::build(&ds, &BootstrapConfig::default()).unwrap().with_xi(0.0);
        let mut day = env.start_day(Streams::new(1).env_day(0));
        let p = env.params().clone();
        let mut o = day.observation().values().to_vec();
        for m in 0..4 {
            let y = day.step(Action::Treatment).unwrap();
            let q = &p.intervals[m];
            let expect = q.alpha + q.beta[0] * o[0] + q.beta[1] * o[1];
            assert!((y - expect).abs() < 1e-12);
            if m < 3 {
                let next: Vec<f64> = (0..2)
                    .map(|r| q.phi[r] + q.transition[r][0] * o[0] + q.transition[r][1] * o[1])
                    .collect();
                let got = day.observation();
                assert!((got.values()[0] - next[0]).abs() < 1e-12 && (got.values()[1] - next[1]).abs() < 1e-12);
                o = next;
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = dataset(12, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aa.csv");
        ds.write_csv(&path).unwrap();
        let back = load_aa_csv(&path).unwrap();
        assert_eq!(back.n_days(), 12);
        assert_eq!(back.intervals(), 3);
        for i in 0..12 {
            for m in 0..3 {
                assert_eq!(back.outcome(i, m), ds.outcome(i, m));
                assert_eq!(back.obs(i, m), ds.obs(i, m));
            }
        }
    }
}
