use serde::{Deserialize, Serialize};

use crate::domain::{history_window, History, StepTriplet, Window};
use crate::error::{Error, Result};

use super::net::TokenGraph;

/// Affine standardisation of observations and outcomes, fixed once fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_mean: Vec<f64>,
    pub obs_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

fn safe_sd(var: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    if sd > 1e-12 {
        sd
    } else {
        1.0
    }
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { obs_mean: vec![0.0; dim], obs_sd: vec![1.0; dim], y_mean: 0.0, y_sd: 1.0 }
    }

    /// Sample moments; constant coordinates keep unit scale.
    pub fn fit(steps: &[StepTriplet]) -> Result<Self> {
        let first = steps.first().ok_or(Error::EmptyPanel)?;
        let d = first.observation.dim();
        let n = steps.len() as f64;
        let mut mean = vec![0.0; d];
        let mut y_mean = 0.0;
        for s in steps {
            for (m, v) in mean.iter_mut().zip(s.observation.values()) {
                *m += v / n;
            }
            y_mean += s.outcome / n;
        }
        let mut var = vec![0.0; d];
        let mut y_var = 0.0;
        for s in steps {
            for ((acc, v), m) in var.iter_mut().zip(s.observation.values()).zip(&mean) {
                *acc += (v - m).powi(2) / n;
            }
            y_var += (s.outcome - y_mean).powi(2) / n;
        }
        Ok(Normalizer { obs_mean: mean, obs_sd: var.into_iter().map(safe_sd).collect(), y_mean, y_sd: safe_sd(y_var) })
    }

    pub fn dim(&self) -> usize {
        self.obs_mean.len()
    }
}

/// Turns histories into token features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub normalizer: Normalizer,
    pub window: Window,
    pub intervals_per_day: usize,
}

/// Pre-embedding tokens: features `[O (normalized), A (±1), Y (normalized)]`
/// per completed step, then the pending observation with zero action and
/// outcome slots.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub features: Vec<Vec<f64>>,
    pub positions: Vec<usize>,
    pub phases: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn to_graph(&self) -> Result<TokenGraph> {
        TokenGraph::causal(&self.features, &self.positions, &self.phases)
    }
}

impl Encoder {
    pub fn obs_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim() + 2
    }

    fn norm_obs(&self, o: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if o.len() != self.obs_dim() {
            return Err(Error::DimensionMismatch { expected: self.obs_dim(), got: o.len() });
        }
        let n = &self.normalizer;
        out.extend(o.iter().zip(&n.obs_mean).zip(&n.obs_sd).map(|((v, m), s)| (v - m) / s));
        Ok(())
    }

    pub fn completed_token(&self, step: &StepTriplet) -> Result<Vec<f64>> {
        let mut t = Vec::with_capacity(self.input_dim());
        self.norm_obs(step.observation.values(), &mut t)?;
        t.push(step.action.sign());
        t.push((step.outcome - self.normalizer.y_mean) / self.normalizer.y_sd);
        Ok(t)
    }

    pub fn pending_token(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut t = Vec::with_capacity(self.input_dim());
        self.norm_obs(obs, &mut t)?;
        t.extend([0.0, 0.0]);
        Ok(t)
    }

    pub fn phase(&self, step_index: usize) -> usize {
        step_index % self.intervals_per_day
    }
}

/// Tokens of the (windowed) history; positions count from the start of the
/// kept window, phases are the interval-of-day of each step.
pub fn encode_history(history: &History, encoder: &Encoder) -> Result<TokenSequence> {
    let kept = history_window(history, encoder.window)?;
    let offset = history.len() - kept.len();
    let mut seq = TokenSequence { features: Vec::new(), positions: Vec::new(), phases: Vec::new() };
    for (i, s) in kept.steps().iter().enumerate() {
        seq.features.push(encoder.completed_token(s)?);
        seq.positions.push(i);
        seq.phases.push(encoder.phase(offset + i));
    }
    seq.features.push(encoder.pending_token(kept.pending().values())?);
    seq.positions.push(kept.len());
    seq.phases.push(encoder.phase(history.len()));
    Ok(seq)
}
