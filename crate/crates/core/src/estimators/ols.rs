use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ate_plugin, IntervalParams, LinearModelParams, ResidualBank};
use crate::domain::{PanelData, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::lstsq;

/// Day × interval regression data with an optional action column.
///
/// A/A data carries action 0 everywhere; the action coefficients are then
/// not identified and reported as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionPanel {
    n_days: usize,
    intervals: usize,
    dim: usize,
    /// `[(i * M + m) * d + k]`
    obs: Vec<f64>,
    outcome: Vec<f64>,
    action: Vec<f64>,
}

impl RegressionPanel {
    pub fn new(
        n_days: usize,
        intervals: usize,
        dim: usize,
        obs: Vec<f64>,
        outcome: Vec<f64>,
        action: Vec<f64>,
    ) -> Result<Self> {
        if n_days == 0 || intervals == 0 {
            return Err(Error::EmptyPanel);
        }
        let cells = n_days * intervals;
        if obs.len() != cells * dim || outcome.len() != cells || action.len() != cells {
            return Err(Error::invalid("regression panel arrays have inconsistent sizes"));
        }
        Ok(RegressionPanel { n_days, intervals, dim, obs, outcome, action })
    }

    pub fn from_panel(panel: &PanelData) -> Self {
        let dim = panel.cell(0, 0).observation.dim();
        let cells = panel.cells();
        RegressionPanel {
            n_days: panel.n_days(),
            intervals: panel.intervals_per_day(),
            dim,
            obs: cells.iter().flat_map(|c| c.observation.values().iter().copied()).collect(),
            outcome: cells.iter().map(|c| c.outcome).collect(),
            action: cells.iter().map(|c| c.action.sign()).collect(),
        }
    }

    /// First `n_days` complete days of a trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let days = traj.complete_days();
        if days == 0 {
            return Err(Error::EmptyPanel);
        }
        let steps = &traj.steps()[..days * traj.intervals_per_day()];
        Ok(RegressionPanel {
            n_days: days,
            intervals: traj.intervals_per_day(),
            dim: traj.obs_dim(),
            obs: steps.iter().flat_map(|c| c.observation.values().iter().copied()).collect(),
            outcome: steps.iter().map(|c| c.outcome).collect(),
            action: steps.iter().map(|c| c.action.sign()).collect(),
        })
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obs(&self, day: usize, interval: usize) -> &[f64] {
        let start = (day * self.intervals + interval) * self.dim;
        &self.obs[start..start + self.dim]
    }

    pub fn outcome(&self, day: usize, interval: usize) -> f64 {
        self.outcome[day * self.intervals + interval]
    }

    pub fn action(&self, day: usize, interval: usize) -> f64 {
        self.action[day * self.intervals + interval]
    }

    fn action_column(&self, interval: usize) -> ActionColumn {
        let first = self.action(0, interval);
        let constant = (1..self.n_days).all(|i| self.action(i, interval) == first);
        match (constant, first == 0.0) {
            (true, true) => ActionColumn::Absent,
            (true, false) => ActionColumn::Constant,
            _ => ActionColumn::Varying,
        }
    }

    /// Design rows `[1, O, (A)]` for one interval.
    fn design(&self, interval: usize, with_action: bool) -> DMatrix<f64> {
        let p = 1 + self.dim + usize::from(with_action);
        DMatrix::from_fn(self.n_days, p, |i, j| {
            if j == 0 {
                1.0
            } else if j <= self.dim {
                self.obs(i, interval)[j - 1]
            } else {
                self.action(i, interval)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ActionColumn {
    /// A/A coding: all zeros.
    Absent,
    /// One arm only in this interval.
    Constant,
    Varying,
}

struct IntervalFit {
    coef: DMatrix<f64>,
    rank: usize,
    cols: usize,
}

fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> IntervalFit {
    let ls = lstsq(x, y);
    IntervalFit { coef: ls.coef, rank: ls.rank, cols: x.ncols() }
}

fn reward_target(data: &RegressionPanel, interval: usize) -> DMatrix<f64> {
    DMatrix::from_fn(data.n_days, 1, |i, _| data.outcome(i, interval))
}

fn transition_target(data: &RegressionPanel, interval: usize) -> DMatrix<f64> {
    DMatrix::from_fn(data.n_days, data.dim, |i, k| data.obs(i, interval + 1)[k])
}

/// Per-interval OLS of `Y_m` and `O_{m+1}` on `(1, O_m, A_m)` with residuals.
///
/// Rank deficiency is an error naming the 1-based interval. Intervals whose
/// action column is all zero (A/A data) drop the action regressor.
pub fn fit_ols_regression(data: &RegressionPanel) -> Result<(LinearModelParams, ResidualBank)> {
    let (n, mm, d) = (data.n_days, data.intervals, data.dim);
    let mut intervals = Vec::with_capacity(mm);
    let mut reward = vec![vec![0.0; mm]; n];
    let mut transition = vec![vec![vec![0.0; d]; mm.saturating_sub(1)]; n];
    for m in 0..mm {
        let with_action = data.action_column(m) != ActionColumn::Absent;
        let x = data.design(m, with_action);
        let mut p = IntervalParams::zeros(d);

        let y = reward_target(data, m);
        let f = fit(&x, &y);
        if f.rank < f.cols {
            return Err(Error::RankDeficient { interval: m + 1, equation: "reward" });
        }
        p.alpha = f.coef[(0, 0)];
        p.beta = (0..d).map(|k| f.coef[(1 + k, 0)]).collect();
        if with_action {
            p.gamma = f.coef[(1 + d, 0)];
        }
        let fitted = &x * &f.coef;
        for i in 0..n {
            reward[i][m] = y[(i, 0)] - fitted[(i, 0)];
        }

        if m + 1 < mm {
            let y = transition_target(data, m);
            let f = fit(&x, &y);
            if f.rank < f.cols {
                return Err(Error::RankDeficient { interval: m + 1, equation: "transition" });
            }
            p.phi = (0..d).map(|k| f.coef[(0, k)]).collect();
            p.transition = (0..d).map(|r| (0..d).map(|c| f.coef[(1 + c, r)]).collect()).collect();
            if with_action {
                p.carryover = (0..d).map(|k| f.coef[(1 + d, k)]).collect();
            }
            let fitted = &x * &f.coef;
            for i in 0..n {
                for k in 0..d {
                    transition[i][m][k] = y[(i, k)] - fitted[(i, k)];
                }
            }
        }
        intervals.push(p);
    }
    Ok((LinearModelParams::new(intervals)?, ResidualBank { reward, transition }))
}

pub fn fit_ols_per_interval(panel: &PanelData) -> Result<(LinearModelParams, ResidualBank)> {
    fit_ols_regression(&RegressionPanel::from_panel(panel))
}

/// Running OLS plug-in estimate with pooled fallbacks for one-armed intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyOlsEstimate {
    pub value: f64,
    pub params: LinearModelParams,
    /// 1-based intervals whose `gamma` came from the pooled fit.
    pub pooled_reward: Vec<usize>,
    /// 1-based intervals whose carryover came from the pooled fit.
    pub pooled_transition: Vec<usize>,
    /// No action variation anywhere: effects set to zero.
    pub unidentified: bool,
}

struct Pooled {
    gamma: f64,
    carryover: Vec<f64>,
    identified: bool,
}

fn pooled_effects(data: &RegressionPanel) -> Pooled {
    let (n, mm, d) = (data.n_days, data.intervals, data.dim);
    let first = data.action[0];
    if data.action.iter().all(|&a| a == first) {
        return Pooled { gamma: 0.0, carryover: vec![0.0; d], identified: false };
    }
    let row = |i: usize, m: usize, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else if j <= d {
            data.obs(i, m)[j - 1]
        } else {
            data.action(i, m)
        }
    };
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..mm).map(move |m| (i, m))).collect();
    let x = DMatrix::from_fn(cells.len(), d + 2, |r, j| row(cells[r].0, cells[r].1, j));
    let y = DMatrix::from_fn(cells.len(), 1, |r, _| data.outcome(cells[r].0, cells[r].1));
    let gamma = lstsq(&x, &y).coef[(d + 1, 0)];

    let moves: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..mm.saturating_sub(1)).map(move |m| (i, m))).collect();
    let carryover = if moves.is_empty() {
        vec![0.0; d]
    } else {
        let x = DMatrix::from_fn(moves.len(), d + 2, |r, j| row(moves[r].0, moves[r].1, j));
        let y = DMatrix::from_fn(moves.len(), d, |r, k| data.obs(moves[r].0, moves[r].1 + 1)[k]);
        let c = lstsq(&x, &y).coef;
        (0..d).map(|k| c[(d + 1, k)]).collect()
    };
    Pooled { gamma, carryover, identified: true }
}

/// OLS plug-in ATE from the complete days of `traj`.
///
/// Never fails on degenerate data: underdetermined fits use minimum-norm
/// solutions, and an interval whose action is constant over the prefix takes
/// its effect coefficients from a pooled fit across all intervals.
pub fn daily_ols_ate(traj: &Trajectory) -> Result<DailyOlsEstimate> {
    let data = RegressionPanel::from_trajectory(traj)?;
    let (mm, d) = (data.intervals, data.dim);
    let mut pooled: Option<Pooled> = None;
    let mut pooled_reward = Vec::new();
    let mut pooled_transition = Vec::new();
    let mut intervals = Vec::with_capacity(mm);
    for m in 0..mm {
        let varying = data.action_column(m) == ActionColumn::Varying;
        let x = data.design(m, varying);
        let mut p = IntervalParams::zeros(d);
        let f = fit(&x, &reward_target(&data, m));
        p.alpha = f.coef[(0, 0)];
        p.beta = (0..d).map(|k| f.coef[(1 + k, 0)]).collect();
        if varying {
            p.gamma = f.coef[(1 + d, 0)];
        } else {
            p.gamma = pooled.get_or_insert_with(|| pooled_effects(&data)).gamma;
            pooled_reward.push(m + 1);
        }
        if m + 1 < mm {
            let f = fit(&x, &transition_target(&data, m));
            p.phi = (0..d).map(|k| f.coef[(0, k)]).collect();
            p.transition = (0..d).map(|r| (0..d).map(|c| f.coef[(1 + c, r)]).collect()).collect();
            if varying {
                p.carryover = (0..d).map(|k| f.coef[(1 + d, k)]).collect();
            } else {
                p.carryover = pooled.get_or_insert_with(|| pooled_effects(&data)).carryover.clone();
                pooled_transition.push(m + 1);
            }
        }
        intervals.push(p);
    }
    let unidentified = pooled.as_ref().is_some_and(|p| !p.identified);
    let params = LinearModelParams::new(intervals)?;
    let value = ate_plugin(&params);
    Ok(DailyOlsEstimate { value, params, pooled_reward, pooled_transition, unidentified })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Action, Observation, StepTriplet};
    use crate::rng::Streams;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn truth() -> IntervalParams {
        IntervalParams {
            alpha: 0.3,
            beta: vec![0.6, 0.2],
            gamma: 0.2,
            phi: vec![0.1, -0.2],
            transition: vec![vec![0.5, 0.1], vec![0.0, 0.6]],
            carryover: vec![0.1, 0.05],
        }
    }

    /// Panel from the stationary model; `noise` scales all shocks.
    fn generate(n: usize, m: usize, noise: f64, seed: u64, action: impl Fn(usize, usize) -> Action) -> PanelData {
        let p = truth();
        let mut rng = Streams::new(seed).rng("panel", 0);
        let mut cells = Vec::new();
        for i in 0..n {
            let mut o: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            for mm in 0..m {
                let a = action(i, mm);
                let e: f64 = rng.sample(StandardNormal);
                let y = p.alpha + p.beta[0] * o[0] + p.beta[1] * o[1] + p.gamma * a.sign() + noise * e;
                cells.push(StepTriplet::new(Observation::new(o.clone()).unwrap(), a, y).unwrap());
                let mut next = vec![0.0; 2];
                for r in 0..2 {
                    let e: f64 = rng.sample(StandardNormal);
                    next[r] = p.phi[r]
                        + p.transition[r][0] * o[0]
                        + p.transition[r][1] * o[1]
                        + p.carryover[r] * a.sign()
                        + noise * e;
                }
                o = next;
            }
        }
        PanelData::new(n, m, cells).unwrap()
    }

    fn random_actions(seed: u64) -> impl Fn(usize, usize) -> Action {
        move |i, m| {
            let mut r = Streams::new(seed).rng("a", (i * 1000 + m) as u64);
            if r.random::<bool>() {
                Action::Treatment
            } else {
                Action::Control
            }
        }
    }

    #[test]
    fn noiseless_recovery() {
        let panel = generate(50, 4, 0.0, 1, random_actions(3));
        let (params, bank) = fit_ols_per_interval(&panel).unwrap();
        let t = truth();
        for (m, p) in params.intervals.iter().enumerate() {
            assert!((p.alpha - t.alpha).abs() < 1e-8);
            assert!((p.gamma - t.gamma).abs() < 1e-8);
            for k in 0..2 {
                assert!((p.beta[k] - t.beta[k]).abs() < 1e-8);
                if m < 3 {
                    assert!((p.phi[k] - t.phi[k]).abs() < 1e-8);
                    assert!((p.carryover[k] - t.carryover[k]).abs() < 1e-8);
                    for c in 0..2 {
                        assert!((p.transition[k][c] - t.transition[k][c]).abs() < 1e-8);
                    }
                }
            }
        }
        assert_eq!(bank.reward.len(), 50);
        assert_eq!(bank.transition[0].len(), 3);
    }

    #[test]
    fn residuals_reconstruct_panel() {
        let panel = generate(20, 3, 0.5, 2, random_actions(4));
        let (params, bank) = fit_ols_per_interval(&panel).unwrap();
        for i in 0..20 {
            for m in 0..3 {
                let c = panel.cell(i, m);
                let p = &params.intervals[m];
                let o = c.observation.values();
                let fit = p.alpha + p.beta[0] * o[0] + p.beta[1] * o[1] + p.gamma * c.action.sign();
                assert!((fit + bank.reward[i][m] - c.outcome).abs() < 1e-10);
                if m < 2 {
                    let next = panel.cell(i, m + 1).observation.values();
                    for k in 0..2 {
                        let f = p.phi[k]
                            + p.transition[k][0] * o[0]
                            + p.transition[k][1] * o[1]
                            + p.carryover[k] * c.action.sign();
                        assert!((f + bank.transition[i][m][k] - next[k]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn aa_panel_leaves_effects_zero() {
        let panel = generate(30, 3, 0.3, 5, |_, _| Action::Control);
        let mut data = RegressionPanel::from_panel(&panel);
        data.action.iter_mut().for_each(|a| *a = 0.0);
        let (params, _) = fit_ols_regression(&data).unwrap();
        for p in &params.intervals {
            assert_eq!(p.gamma, 0.0);
            assert!(p.carryover.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn one_armed_interval_is_rank_deficient() {
        let panel = generate(30, 3, 0.3, 5, |_, m| if m == 1 { Action::Treatment } else { Action::Control });
        match fit_ols_per_interval(&panel) {
            Err(Error::RankDeficient { interval, .. }) => assert_eq!(interval, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn daily_estimate_pools_one_armed_interval() {
        let actions = random_actions(9);
        let panel = generate(40, 3, 0.3, 8, move |i, m| if m == 2 { Action::Treatment } else { actions(i, m) });
        let traj = crate::domain::flatten_panel(&panel).unwrap();
        let est = daily_ols_ate(&traj).unwrap();
        assert_eq!(est.pooled_reward, vec![3]);
        assert!(est.pooled_transition.is_empty());
        assert!(!est.unidentified);

        // Independent recomputation: strict fits on the two varying
        // intervals, pooled gamma on the third.
        let data = RegressionPanel::from_panel(&panel);
        let pooled = pooled_effects(&data);
        let mut expected = est.params.clone();
        for m in 0..2 {
            let x = data.design(m, true);
            let g = lstsq(&x, &reward_target(&data, m)).coef[(3, 0)];
            assert!((expected.intervals[m].gamma - g).abs() < 1e-12);
        }
        expected.intervals[2].gamma = pooled.gamma;
        assert!((ate_plugin(&expected) - est.value).abs() < 1e-12);
    }

    #[test]
    fn daily_estimate_without_variation_is_flagged() {
        let panel = generate(5, 2, 0.3, 8, |_, _| Action::Treatment);
        let est = daily_ols_ate(&crate::domain::flatten_panel(&panel).unwrap()).unwrap();
        assert!(est.unidentified);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn daily_estimate_handles_short_prefix() {
        let panel = generate(2, 4, 0.3, 8, random_actions(1));
        let est = daily_ols_ate(&crate::domain::flatten_panel(&panel).unwrap()).unwrap();
        assert!(est.value.is_finite());
    }
}
