//! A dynamics-free environment where one action always earns more, for
//! checking that the learner can find a dominant action at all.

use rand_distr::{Distribution, StandardNormal};

use crate::domain::{Action, Observation, Trajectory};
use crate::env::{DaySim, Simulator};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::reward::RewardFn;

/// I.i.d. Gaussian observations and outcomes, unaffected by actions.
#[derive(Clone, Debug)]
pub struct DominantActionEnv {
    pub obs_dim: usize,
    pub intervals: usize,
}

struct Day {
    rng: Rng,
    obs: Observation,
    dim: usize,
    steps: usize,
    intervals: usize,
}

fn draw(rng: &mut Rng, dim: usize) -> Observation {
    Observation::new((0..dim).map(|_| StandardNormal.sample(rng)).collect()).expect("finite draws")
}

impl Simulator for DominantActionEnv {
    fn name(&self) -> String {
        "dominant-action".into()
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn intervals_per_day(&self) -> usize {
        self.intervals
    }

    fn start_day(&self, mut rng: Rng) -> Box<dyn DaySim + '_> {
        let obs = draw(&mut rng, self.obs_dim);
        Box::new(Day { rng, obs, dim: self.obs_dim, steps: 0, intervals: self.intervals })
    }
}

impl DaySim for Day {
    fn observation(&self) -> Observation {
        self.obs.clone()
    }

    fn step(&mut self, _action: Action) -> Result<f64> {
        if self.steps >= self.intervals {
            return Err(Error::DayTerminated(self.intervals));
        }
        self.steps += 1;
        self.obs = draw(&mut self.rng, self.dim);
        Ok(StandardNormal.sample(&mut self.rng))
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.steps >= self.intervals
    }
}

/// Pays 1 for every step taken with `dominant`, 0 otherwise.
#[derive(Clone, Debug)]
pub struct DominantReward {
    pub dominant: Action,
}

impl RewardFn for DominantReward {
    fn rewards(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        Ok(traj.steps().iter().map(|s| if s.action == self.dominant { 1.0 } else { 0.0 }).collect())
    }
}
