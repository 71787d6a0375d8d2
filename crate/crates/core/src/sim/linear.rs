//! Linear-Gaussian simulator with carryover through the observation.
//!
//! `Y = α + βᵀO + γA + ε_Y` and, within a day, `O' = φ + ΦO + ΓA + ε_O`.
//! Days start from `O ~ N(0, I)`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Observation};
use crate::env::{DaySim, Simulator};
use crate::error::{Error, Result};
use crate::estimators::{ate_plugin, IntervalParams, LinearModelParams};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    I,
    Ii,
    Iii,
    Iv,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(Setting::I),
            "ii" => Ok(Setting::Ii),
            "iii" => Ok(Setting::Iii),
            "iv" => Ok(Setting::Iv),
            other => Err(Error::Unknown(format!("setting {other}"))),
        }
    }
}

impl Setting {
    pub fn id(self) -> &'static str {
        match self {
            Setting::I => "i",
            Setting::Ii => "ii",
            Setting::Iii => "iii",
            Setting::Iv => "iv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEnvConfig {
    pub setting: Option<Setting>,
    pub params: LinearModelParams,
    pub sigma_y: f64,
    pub sigma_o: f64,
    /// Forces every noise draw, including the initial observation, to zero.
    #[serde(default)]
    pub zero_noise: bool,
}

impl LinearEnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.sigma_y > 0.0 && self.sigma_o > 0.0) {
            return Err(Error::invalid("noise scales must be positive"));
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        self.params.intervals_per_day()
    }
}

/// Stationary coefficients of the four benchmark settings with `m` intervals.
pub fn make_setting(setting: Setting, intervals_per_day: usize) -> Result<LinearEnvConfig> {
    if intervals_per_day == 0 {
        return Err(Error::invalid("intervals_per_day must be positive"));
    }
    let mut p = IntervalParams {
        alpha: 0.0,
        beta: vec![0.6, 0.2],
        gamma: 0.2,
        phi: vec![0.0, 0.0],
        transition: vec![vec![0.5, 0.1], vec![0.0, 0.6]],
        carryover: vec![0.1, 0.05],
    };
    let sigma = match setting {
        Setting::I => 0.2,
        Setting::Ii => {
            p.transition = vec![vec![0.6, 0.2], vec![0.5, 0.6]];
            0.3
        }
        Setting::Iii => 0.3,
        Setting::Iv => {
            p.beta = vec![0.3, 0.1];
            0.3
        }
    };
    Ok(LinearEnvConfig {
        setting: Some(setting),
        params: LinearModelParams::stationary(intervals_per_day, p)?,
        sigma_y: sigma,
        sigma_o: sigma,
        zero_noise: false,
    })
}

/// Plug-in ATE of the generating parameters.
pub fn true_ate(config: &LinearEnvConfig) -> f64 {
    ate_plugin(&config.params)
}

#[derive(Clone, Debug)]
pub struct LinearEnv {
    config: LinearEnvConfig,
}

impl LinearEnv {
    pub fn new(config: LinearEnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(LinearEnv { config })
    }

    pub fn config(&self) -> &LinearEnvConfig {
        &self.config
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if self.config.zero_noise {
            0.0
        } else {
            z
        }
    }

    /// Day starting from a given observation; noise still comes from `rng`.
    pub fn start_from(&self, observation: Observation, rng: Rng) -> LinearDay<'_> {
        LinearDay { env: self, rng, obs: observation.values().to_vec(), interval: 0 }
    }
}

impl Simulator for LinearEnv {
    fn name(&self) -> String {
        match self.config.setting {
            Some(s) => format!("linear-{}", s.id()),
            None => "linear-custom".into(),
        }
    }

    fn obs_dim(&self) -> usize {
        self.config.params.dim()
    }

    fn intervals_per_day(&self) -> usize {
        self.config.intervals_per_day()
    }

    fn start_day(&self, mut rng: Rng) -> Box<dyn DaySim + '_> {
        let obs = (0..self.obs_dim()).map(|_| self.draw(&mut rng)).collect();
        Box::new(LinearDay { env: self, rng, obs, interval: 0 })
    }
}

pub struct LinearDay<'a> {
    env: &'a LinearEnv,
    rng: Rng,
    obs: Vec<f64>,
    interval: usize,
}

impl DaySim for LinearDay<'_> {
    fn observation(&self) -> Observation {
        Observation::new(self.obs.clone()).expect("finite state")
    }

    fn step(&mut self, action: Action) -> Result<f64> {
        let m_total = self.env.intervals_per_day();
        if self.interval >= m_total {
            return Err(Error::DayTerminated(self.interval));
        }
        let cfg = &self.env.config;
        let p = &cfg.params.intervals[self.interval];
        let a = action.sign();
        let o = &self.obs;
        let dot: f64 = p.beta.iter().zip(o).map(|(b, x)| b * x).sum();
        let y = p.alpha + dot + p.gamma * a + cfg.sigma_y * self.env.draw(&mut self.rng);
        // Transition noise is drawn on every step so the stream position
        // never depends on the interval.
        let shocks: Vec<f64> = (0..o.len()).map(|_| self.env.draw(&mut self.rng)).collect();
        if self.interval + 1 < m_total {
            let next = (0..o.len())
                .map(|r| {
                    let row: f64 = p.transition[r].iter().zip(o).map(|(t, x)| t * x).sum();
                    p.phi[r] + row + p.carryover[r] * a + cfg.sigma_o * shocks[r]
                })
                .collect();
            self.obs = next;
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

    fn noiseless(m: usize) -> LinearEnv {
        let mut c = make_setting(Setting::I, m).unwrap();
        c.zero_noise = true;
        LinearEnv::new(c).unwrap()
    }

    #[test]
    fn settings() {
        let i = make_setting(Setting::I, 4).unwrap();
        assert_eq!(i.params.intervals[0].transition[1][1], 0.6);
        assert_eq!(i.sigma_y, 0.2);
        assert_eq!(make_setting(Setting::Ii, 4).unwrap().params.intervals[2].transition[1][0], 0.5);
        assert_eq!(make_setting(Setting::Iv, 4).unwrap().params.intervals[3].beta, vec![0.3, 0.1]);
        assert!("v".parse::<Setting>().is_err());
    }

    #[test]
    fn substitution_examples() {
        let env = noiseless(4);
        let mut day = env.start_from(Observation::from([0.0, 0.0]), Streams::new(0).env_day(0));
        assert!((day.step(Action::Treatment).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(day.observation().values(), &[0.1, 0.05]);

        let mut day = env.start_from(Observation::from([1.0, 0.0]), Streams::new(0).env_day(0));
        assert!((day.step(Action::Control).unwrap() - 0.4).abs() < 1e-15);
        let o = day.observation();
        assert!((o.values()[0] - 0.4).abs() < 1e-15 && (o.values()[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_start_and_termination() {
        let env = noiseless(2);
        let mut day = env.start_day(Streams::new(3).env_day(0));
        assert_eq!(day.observation().values(), &[0.0, 0.0]);
        day.step(Action::Treatment).unwrap();
        day.step(Action::Treatment).unwrap();
        assert!(day.is_done());
        assert!(matches!(day.step(Action::Control), Err(Error::DayTerminated(2))));
    }

    #[test]
    fn true_ate_cases() {
        assert!((true_ate(&make_setting(Setting::I, 4).unwrap()) - 0.55495).abs() < 1e-12);
        assert!((true_ate(&make_setting(Setting::I, 1).unwrap()) - 0.4).abs() < 1e-15);
        let mut c = make_setting(Setting::I, 4).unwrap();
        for p in &mut c.params.intervals {
            p.gamma = 0.0;
            p.carryover = vec![0.0; 2];
        }
        assert_eq!(true_ate(&c), 0.0);
    }

    #[test]
    fn common_random_numbers_across_actions() {
        let env = LinearEnv::new(make_setting(Setting::I, 4).unwrap()).unwrap();
        let s = Streams::new(9);
        let a = env.start_day(s.env_day(5)).observation();
        let b = env.start_day(s.env_day(5)).observation();
        assert_eq!(a, b);
    }
}
