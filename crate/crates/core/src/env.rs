//! Simulator interface shared by the linear, bootstrap and dispatch
//! environments, plus the rollout loop that drives a design through one.

use crate::domain::{sample_action, start_session, Action, DesignPolicy, History, Observation, StepTriplet, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};

/// An environment whose days are independent episodes of fixed length.
pub trait Simulator: Send + Sync {
    fn name(&self) -> String;

    fn obs_dim(&self) -> usize;

    fn intervals_per_day(&self) -> usize;

    /// Starts a day driven entirely by `rng`. Two designs given the same day
    /// stream see the same exogenous randomness.
    fn start_day(&self, rng: Rng) -> Box<dyn DaySim + '_>;
}

/// One day in progress.
pub trait DaySim {
    fn observation(&self) -> Observation;

    /// Applies an action, returning the interval outcome.
    fn step(&mut self, action: Action) -> Result<f64>;

    fn steps_taken(&self) -> usize;

    fn is_done(&self) -> bool;
}

/// Runs `n_days` under `policy`; environment days use `streams.env_day(i)`,
/// allocation draws use `streams.policy()`.
pub fn run_experiment(
    env: &dyn Simulator,
    n_days: usize,
    policy: &dyn DesignPolicy,
    streams: &Streams,
) -> Result<Trajectory> {
    if n_days == 0 {
        return Err(Error::invalid("experiment needs at least one day"));
    }
    let m = env.intervals_per_day();
    let mut policy_rng = streams.policy();
    let mut session = start_session(policy);
    let mut history: Option<History> = None;
    let mut last: Option<(Action, f64)> = None;
    for day in 0..n_days {
        let mut sim = env.start_day(streams.env_day(day));
        for _ in 0..m {
            let obs = sim.observation();
            let h = match history.as_mut() {
                None => history.insert(History::new(obs)),
                Some(h) => {
                    let (a, y) = last.expect("previous step recorded");
                    h.advance(a, y, obs);
                    h
                }
            };
            let p = session.allocate(h)?;
            let action = sample_action(p, &mut policy_rng)?;
            let outcome = sim.step(action)?;
            last = Some((action, outcome));
        }
    }
    let history = history.expect("at least one step");
    let pending = history.pending().clone();
    let (a, y) = last.expect("at least one step");
    let mut steps = history.into_steps();
    steps.push(StepTriplet::new(pending, a, y)?);
    Trajectory::new(m, steps)
}

/// Outcomes of one day under a fixed action.
pub fn rollout_constant_day(env: &dyn Simulator, action: Action, rng: Rng) -> Result<Vec<f64>> {
    let mut sim = env.start_day(rng);
    let mut out = Vec::with_capacity(env.intervals_per_day());
    while !sim.is_done() {
        out.push(sim.step(action)?);
    }
    Ok(out)
}
