//! Per-step linear surrogate of the dispatch world's summary dynamics.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DispatchEnv;
use crate::domain::{sample_action, Action, Observation};
use crate::env::{DaySim, Simulator};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::rng::{Rng, Streams};

/// One logged step: `(O_t, A_t, Y_t, O_{t+1})`, the last absent at day end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSample {
    pub t: usize,
    pub obs: [f64; 2],
    pub action: Action,
    pub outcome: f64,
    pub next: Option<[f64; 2]>,
}

/// Coefficients on `(1, O₁, O₂, A)` and Gaussian residual moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStep {
    pub reward_coef: [f64; 4],
    pub reward_residual: (f64, f64),
    pub transition_coef: [[f64; 4]; 2],
    pub transition_residual: [(f64, f64); 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub steps: Vec<SurrogateStep>,
    /// Empirical day-start summaries, resampled uniformly.
    pub initial: Vec<[f64; 2]>,
    pub order_cap: f64,
    pub driver_cap: f64,
}

/// Logs `days` world days with independent fair-coin actions at every step.
pub fn collect_surrogate_data(env: &DispatchEnv, days: usize, streams: &Streams) -> Result<Vec<Vec<SurrogateSample>>> {
    let mut policy = streams.rng("surrogate-actions", 0);
    let mut out = Vec::with_capacity(days);
    for day in 0..days {
        let mut w = env.world(streams.rng("surrogate-day", day as u64));
        let mut log: Vec<SurrogateSample> = Vec::with_capacity(env.config().horizon);
        while !w.is_done() {
            let obs = w.summary();
            if let Some(prev) = log.last_mut() {
                prev.next = Some(obs);
            }
            let action = sample_action(0.5, &mut policy)?;
            let t = w.time();
            let outcome = w.step(action)?;
            log.push(SurrogateSample { t, obs, action, outcome, next: None });
        }
        out.push(log);
    }
    Ok(out)
}

fn moments(res: &[f64]) -> (f64, f64) {
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    (mean, res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
}

/// Per-step OLS of `Y_t` and `O_{t+1}` on `(1, O_t, A_t)`.
pub fn fit_surrogate(days: &[Vec<SurrogateSample>], order_cap: f64, driver_cap: f64) -> Result<SurrogateModel> {
    let horizon = days.first().map_or(0, Vec::len);
    if horizon == 0 {
        return Err(Error::EmptyPanel);
    }
    if days.iter().any(|d| d.len() != horizon) {
        return Err(Error::invalid("surrogate days have unequal length"));
    }
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let rows: Vec<&SurrogateSample> = days.iter().map(|d| &d[t]).collect();
        let treated = rows.iter().filter(|r| r.action == Action::Treatment).count();
        if treated == 0 || treated == rows.len() {
            return Err(Error::invalid(format!("step {} observed only one action", t + 1)));
        }
        let x = DMatrix::from_fn(rows.len(), 4, |i, j| match j {
            0 => 1.0,
            1 | 2 => rows[i].obs[j - 1],
            _ => rows[i].action.sign(),
        });
        let fit = |y: DMatrix<f64>| -> ([f64; 4], (f64, f64)) {
            let c = lstsq(&x, &y).coef;
            let res: Vec<f64> = (&y - &x * &c).iter().copied().collect();
            ([c[0], c[1], c[2], c[3]], moments(&res))
        };
        let (reward_coef, reward_residual) = fit(DMatrix::from_fn(rows.len(), 1, |i, _| rows[i].outcome));
        let mut transition_coef = [[0.0; 4]; 2];
        let mut transition_residual = [(0.0, 0.0); 2];
        if t + 1 < horizon {
            for k in 0..2 {
                let y = DMatrix::from_fn(rows.len(), 1, |i, _| rows[i].next.expect("next summary")[k]);
                (transition_coef[k], transition_residual[k]) = fit(y);
            }
        }
        steps.push(SurrogateStep { reward_coef, reward_residual, transition_coef, transition_residual });
    }
    let initial = days.iter().map(|d| d[0].obs).collect();
    Ok(SurrogateModel { steps, initial, order_cap, driver_cap })
}

fn linear(c: &[f64; 4], o: &[f64; 2], a: Action) -> f64 {
    c[0] + c[1] * o[0] + c[2] * o[1] + c[3] * a.sign()
}

/// Surrogate as an experiment environment.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateEnv {
    model: SurrogateModel,
}

impl SurrogateEnv {
    pub fn new(model: SurrogateModel) -> Result<Self> {
        if model.steps.is_empty() || model.initial.is_empty() {
            return Err(Error::EmptyPanel);
        }
        Ok(SurrogateEnv { model })
    }

    pub fn model(&self) -> &SurrogateModel {
        &self.model
    }
}

impl Simulator for SurrogateEnv {
    fn name(&self) -> String {
        "dispatch-surrogate".into()
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn intervals_per_day(&self) -> usize {
        self.model.steps.len()
    }

    fn start_day(&self, mut rng: Rng) -> Box<dyn DaySim + '_> {
        let obs = self.model.initial[rng.random_range(0..self.model.initial.len())];
        Box::new(SurrogateDay { env: self, rng, obs, t: 0 })
    }
}

struct SurrogateDay<'a> {
    env: &'a SurrogateEnv,
    rng: Rng,
    obs: [f64; 2],
    t: usize,
}

impl DaySim for SurrogateDay<'_> {
    fn observation(&self) -> Observation {
        Observation::from(self.obs)
    }

    fn step(&mut self, action: Action) -> Result<f64> {
        let m = &self.env.model;
        if self.t >= m.steps.len() {
            return Err(Error::DayTerminated(self.t));
        }
        let s = &m.steps[self.t];
        let mut noise = |(mean, var): (f64, f64)| -> f64 {
            let z: f64 = self.rng.sample(StandardNormal);
            mean + var.sqrt() * z
        };
        let y = (linear(&s.reward_coef, &self.obs, action) + noise(s.reward_residual)).max(0.0);
        let caps = [m.order_cap, m.driver_cap];
        let mut next = [0.0; 2];
        for k in 0..2 {
            let v = linear(&s.transition_coef[k], &self.obs, action) + noise(s.transition_residual[k]);
            next[k] = v.round().clamp(0.0, caps[k]);
        }
        if self.t + 1 < m.steps.len() {
            self.obs = next;
        }
        self.t += 1;
        Ok(y)
    }

    fn steps_taken(&self) -> usize {
        self.t
    }

    fn is_done(&self) -> bool {
        self.t >= self.env.model.steps.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_days(n: usize) -> Vec<Vec<SurrogateSample>> {
        (0..n)
            .map(|i| {
                let mut o = [5.0 + (i % 7) as f64, 10.0 + (i % 3) as f64];
                (0..3)
                    .map(|t| {
                        let a = if (i + t) % 2 == 0 { Action::Treatment } else { Action::Control };
                        let y = 1.0 + 0.5 * o[0] + 0.1 * o[1] + 0.3 * a.sign();
                        let next = [o[0] * 0.5 + 2.0, o[1] - 1.0 + a.sign()];
                        let s = SurrogateSample { t, obs: o, action: a, outcome: y, next: (t < 2).then_some(next) };
                        o = next;
                        s
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn exact_data_has_no_residual_variance() {
        let m = fit_surrogate(&exact_days(40), 100.0, 25.0).unwrap();
        for s in &m.steps {
            assert!(s.reward_residual.1 < 1e-20);
            assert!((s.reward_coef[3] - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn outputs_are_integer_and_bounded() {
        let mut m = fit_surrogate(&exact_days(40), 100.0, 25.0).unwrap();
        for s in &mut m.steps {
            s.transition_residual = [(0.0, 400.0), (0.0, 400.0)];
        }
        let env = SurrogateEnv::new(m).unwrap();
        for d in 0..50 {
            let mut day = env.start_day(Streams::new(2).env_day(d));
            while !day.is_done() {
                day.step(Action::Treatment).unwrap();
                let o = day.observation();
                let v = o.values();
                assert!(v[0].fract() == 0.0 && v[1].fract() == 0.0);
                assert!((0.0..=100.0).contains(&v[0]) && (0.0..=25.0).contains(&v[1]));
            }
        }
    }

    #[test]
    fn one_armed_step_rejected() {
        let mut days = exact_days(10);
        for d in &mut days {
            d[1].action = Action::Control;
        }
        assert!(fit_surrogate(&days, 100.0, 25.0).is_err());
    }
}
