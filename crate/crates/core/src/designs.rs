//! Baseline allocation designs and the oracle Neyman allocation.
//!
//! Every design is a [`DesignPolicy`]: a deterministic map from the history
//! to the probability of assigning +1, so the same rollout loop drives them
//! all. Plain sequence generators are provided for inspection and tests.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, DesignPolicy, History};
use crate::error::{Error, Result};
use crate::estimators::{neyman_allocation, ConditionalVarianceSpec};
use crate::rng::Rng;

/// Blocks of `period` equal actions alternating from `start`.
pub fn switchback_sequence(t_total: usize, period: usize, start: Action) -> Result<Vec<Action>> {
    if t_total == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    if period == 0 {
        return Err(Error::invalid("switchback period must be >= 1"));
    }
    Ok((0..t_total).map(|t| switchback_action(t, period, start)).collect())
}

fn switchback_action(t: usize, period: usize, start: Action) -> Action {
    if (t / period) % 2 == 0 {
        start
    } else {
        start.flip()
    }
}

/// Uniform first action, then a flip with probability `p` at every step.
pub fn random_switchback(t_total: usize, rng: &mut Rng, p: f64) -> Result<Vec<Action>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("switch probability {p} outside (0, 1]")));
    }
    let mut a = if rng.random::<bool>() { Action::Treatment } else { Action::Control };
    let mut out = Vec::with_capacity(t_total);
    for t in 0..t_total {
        if t > 0 && rng.random::<f64>() < p {
            a = a.flip();
        }
        out.push(a);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DayPattern {
    /// Deterministic ABAB over days.
    AlternateByDay,
    /// Fair coin per day.
    RandomizedByDay,
}

/// One action per day repeated `m` times.
pub fn daily_alternation(n: usize, m: usize, pattern: DayPattern, start: Action, rng: &mut Rng) -> Vec<Action> {
    let mut out = Vec::with_capacity(n * m);
    for day in 0..n {
        let a = match pattern {
            DayPattern::AlternateByDay => {
                if day % 2 == 0 {
                    start
                } else {
                    start.flip()
                }
            }
            DayPattern::RandomizedByDay => {
                if rng.random::<bool>() {
                    Action::Treatment
                } else {
                    Action::Control
                }
            }
        };
        out.extend(std::iter::repeat_n(a, m));
    }
    out
}

fn indicator(a: Action) -> f64 {
    if a == Action::Treatment {
        1.0
    } else {
        0.0
    }
}

/// Fixed-period switchback over the flattened time index.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSwitchback {
    pub period: usize,
    pub start: Action,
}

impl DesignPolicy for FixedSwitchback {
    fn name(&self) -> &str {
        "fixed-switchback"
    }

    fn allocate(&self, history: &History) -> Result<f64> {
        if self.period == 0 {
            return Err(Error::invalid("switchback period must be >= 1"));
        }
        Ok(indicator(switchback_action(history.len(), self.period, self.start)))
    }
}

/// Markov switchback: keep the last action with probability `1 − p`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomSwitchback {
    pub p_switch: f64,
}

impl DesignPolicy for RandomSwitchback {
    fn name(&self) -> &str {
        "random-switchback"
    }

    fn allocate(&self, history: &History) -> Result<f64> {
        Ok(match history.last_action() {
            None => 0.5,
            Some(Action::Treatment) => 1.0 - self.p_switch,
            Some(Action::Control) => self.p_switch,
        })
    }
}

/// Day-level assignment held constant within each day of `intervals` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DailyAlternation {
    pub intervals: usize,
    pub pattern: DayPattern,
    pub start: Action,
}

impl DesignPolicy for DailyAlternation {
    fn name(&self) -> &str {
        match self.pattern {
            DayPattern::AlternateByDay => "daily-alternation",
            DayPattern::RandomizedByDay => "daily-randomized",
        }
    }

    fn allocate(&self, history: &History) -> Result<f64> {
        let t = history.len();
        if t % self.intervals != 0 {
            return Ok(indicator(history.last_action().expect("mid-day history has a previous step")));
        }
        Ok(match self.pattern {
            DayPattern::AlternateByDay => {
                let day = t / self.intervals;
                indicator(if day % 2 == 0 { self.start } else { self.start.flip() })
            }
            DayPattern::RandomizedByDay => 0.5,
        })
    }
}

/// Independent assignment with a fixed probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Bernoulli(pub f64);

impl DesignPolicy for Bernoulli {
    fn name(&self) -> &str {
        "bernoulli"
    }

    fn allocate(&self, _: &History) -> Result<f64> {
        crate::domain::check_probability(self.0, "bernoulli design")
    }
}

/// `σ(H,O,+1) / (σ(H,O,+1) + σ(H,O,−1))` at every history.
#[derive(Clone)]
pub struct NeymanOracle {
    sigma: ConditionalVarianceSpec,
}

pub fn neyman_oracle_policy(sigma: ConditionalVarianceSpec) -> NeymanOracle {
    NeymanOracle { sigma }
}

impl DesignPolicy for NeymanOracle {
    fn name(&self) -> &str {
        "neyman-oracle"
    }

    fn allocate(&self, history: &History) -> Result<f64> {
        neyman_allocation((self.sigma)(history, Action::Treatment), (self.sigma)(history, Action::Control))
    }
}

/// Benchmark design families with their hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DesignSpec {
    /// Alternate treatment by day.
    Tmdp,
    /// Randomize treatment by day.
    Nmdp,
    /// Fixed switchback period.
    Wsy { period: usize },
    /// Random switchback with burn-in difference in means.
    Hw { p_switch: f64, burn_in: usize },
    /// Random switchback with Horvitz–Thompson over a carryover window.
    Bsz { p_switch: f64, window: usize },
    /// Random switchback with the OLS plug-in estimator.
    Xct { p_switch: f64 },
    /// Learned transformer policy from a checkpoint file.
    Trl { checkpoint: String },
    /// Independent per-step coin.
    Bernoulli { p: f64 },
}

impl DesignSpec {
    pub fn family(&self) -> &'static str {
        match self {
            DesignSpec::Tmdp => "TMDP",
            DesignSpec::Nmdp => "NMDP",
            DesignSpec::Wsy { .. } => "WSY",
            DesignSpec::Hw { .. } => "HW",
            DesignSpec::Bsz { .. } => "BSZ",
            DesignSpec::Xct { .. } => "XCT",
            DesignSpec::Trl { .. } => "TRL",
            DesignSpec::Bernoulli { .. } => "IID",
        }
    }

    /// Family name plus hyperparameters, e.g. `WSY(period=2)`.
    pub fn id(&self) -> String {
        match self {
            DesignSpec::Wsy { period } => format!("WSY(period={period})"),
            DesignSpec::Hw { p_switch, burn_in } => format!("HW(p={p_switch},burn_in={burn_in})"),
            DesignSpec::Bsz { p_switch, window } => format!("BSZ(p={p_switch},window={window})"),
            DesignSpec::Xct { p_switch } => format!("XCT(p={p_switch})"),
            DesignSpec::Bernoulli { p } => format!("IID(p={p})"),
            other => other.family().to_string(),
        }
    }

    /// Allocation policy for the non-learned designs.
    pub fn baseline_policy(&self, intervals: usize) -> Result<Box<dyn DesignPolicy>> {
        Ok(match *self {
            DesignSpec::Tmdp => Box::new(DailyAlternation { intervals, pattern: DayPattern::AlternateByDay, start: Action::Treatment }),
            DesignSpec::Nmdp => Box::new(DailyAlternation { intervals, pattern: DayPattern::RandomizedByDay, start: Action::Treatment }),
            DesignSpec::Wsy { period } => {
                if period == 0 {
                    return Err(Error::Config("WSY period must be >= 1".into()));
                }
                Box::new(FixedSwitchback { period, start: Action::Treatment })
            }
            DesignSpec::Hw { p_switch, .. } | DesignSpec::Bsz { p_switch, .. } | DesignSpec::Xct { p_switch } => {
                if !(p_switch > 0.0 && p_switch <= 1.0) {
                    return Err(Error::Config(format!("switch probability {p_switch} outside (0, 1]")));
                }
                Box::new(RandomSwitchback { p_switch })
            }
            DesignSpec::Bernoulli { p } => Box::new(Bernoulli(p)),
            DesignSpec::Trl { .. } => return Err(Error::invalid("TRL policies are loaded from checkpoints")),
        })
    }
}

/// Environment families, which decide the default estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Linear,
    Bootstrap,
    Dispatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorId {
    OlsPlugin,
    Lstd,
    HorvitzThompson { p_switch: f64, window: usize },
    BurnIn { burn_in: usize },
    /// Returns the truth; for harness checks.
    Oracle,
}

impl EstimatorId {
    pub fn id(&self) -> String {
        match self {
            EstimatorId::OlsPlugin => "ols-plugin".into(),
            EstimatorId::Lstd => "lstd".into(),
            EstimatorId::HorvitzThompson { window, .. } => format!("horvitz-thompson(window={window})"),
            EstimatorId::BurnIn { burn_in } => format!("burn-in-dim(burn_in={burn_in})"),
            EstimatorId::Oracle => "oracle".into(),
        }
    }
}

/// Estimator each design is evaluated with.
pub fn paired_estimator(design: &DesignSpec, env: EnvKind) -> EstimatorId {
    let default = match env {
        EnvKind::Dispatch => EstimatorId::Lstd,
        EnvKind::Linear | EnvKind::Bootstrap => EstimatorId::OlsPlugin,
    };
    match *design {
        DesignSpec::Bsz { p_switch, window } => EstimatorId::HorvitzThompson { p_switch, window },
        DesignSpec::Hw { burn_in, .. } => EstimatorId::BurnIn { burn_in },
        DesignSpec::Xct { .. } => EstimatorId::OlsPlugin,
        _ => default,
    }
}

/// Looks a design family up by its display name.
pub fn paired_estimator_by_name(name: &str, env: EnvKind) -> Result<EstimatorId> {
    let spec = match name {
        "TMDP" => DesignSpec::Tmdp,
        "NMDP" => DesignSpec::Nmdp,
        "WSY" => DesignSpec::Wsy { period: 1 },
        "HW" => DesignSpec::Hw { p_switch: 0.5, burn_in: 1 },
        "BSZ" => DesignSpec::Bsz { p_switch: 0.5, window: 1 },
        "XCT" => DesignSpec::Xct { p_switch: 0.5 },
        "TRL" => DesignSpec::Trl { checkpoint: String::new() },
        other => return Err(Error::Unknown(format!("design {other}"))),
    };
    Ok(paired_estimator(&spec, env))
}
