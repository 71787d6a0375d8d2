use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{AllocationSession, DesignPolicy, History, Window};
use crate::domain::Action;
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::encode::{encode_history, Encoder};
use super::net::{KvCache, NetShape, QNet};
use super::TrlConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Argmax over (−1, +1); ties go to +1.
pub fn greedy_action(q: [f64; 2]) -> Action {
    if q[1] >= q[0] {
        Action::Treatment
    } else {
        Action::Control
    }
}

/// Incremental Q evaluation along one growing history. Unbounded windows
/// reuse cached keys and values; finite windows re-encode the window.
pub struct QSession<'a> {
    net: &'a QNet,
    params: &'a [f64],
    encoder: &'a Encoder,
    cache: KvCache,
}

impl<'a> QSession<'a> {
    pub fn new(net: &'a QNet, params: &'a [f64], encoder: &'a Encoder) -> Result<Self> {
        net.check_params(params)?;
        Ok(QSession { net, params, encoder, cache: net.kv_cache() })
    }

    pub fn q_values(&mut self, history: &History) -> Result<[f64; 2]> {
        if self.encoder.window != Window::Unbounded {
            let seq = encode_history(history, self.encoder)?;
            let q = self.net.forward(self.params, &seq.to_graph()?)?;
            return Ok(*q.last().expect("nonempty sequence"));
        }
        if history.len() < self.cache.len() {
            self.cache = self.net.kv_cache();
        }
        for i in self.cache.len()..history.len() {
            let tok = self.encoder.completed_token(&history.steps()[i])?;
            self.net.forward_token(self.params, &mut self.cache, &tok, i, self.encoder.phase(i), true)?;
        }
        let tok = self.encoder.pending_token(history.pending().values())?;
        let t = history.len();
        self.net.forward_token(self.params, &mut self.cache, &tok, t, self.encoder.phase(t), false)
    }
}

/// Greedy policy of a trained Q-network.
#[derive(Clone, Debug)]
pub struct TrlPolicy {
    net: QNet,
    params: Vec<f64>,
    encoder: Encoder,
    config: TrlConfig,
}

impl TrlPolicy {
    pub fn new(config: TrlConfig, encoder: Encoder, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let net = QNet::new(config.shape(encoder.obs_dim(), encoder.intervals_per_day))?;
        net.check_params(&params)?;
        if encoder.window != config.window {
            return Err(Error::Config("encoder window differs from the config".into()));
        }
        Ok(TrlPolicy { net, params, encoder, config })
    }

    pub fn net(&self) -> &QNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn config(&self) -> &TrlConfig {
        &self.config
    }

    /// Q-values at the pending observation, order (−1, +1).
    pub fn q_values(&self, history: &History) -> Result<[f64; 2]> {
        let seq = encode_history(history, &self.encoder)?;
        let q = self.net.forward(&self.params, &seq.to_graph()?)?;
        Ok(*q.last().expect("nonempty sequence"))
    }

    pub fn q_session(&self) -> Result<QSession<'_>> {
        QSession::new(&self.net, &self.params, &self.encoder)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            shape: *self.net.shape(),
            encoder: self.encoder.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", ck.format_version)));
        }
        if ck.config_hash != ck.config.hash() {
            return Err(Error::Data("checkpoint config hash mismatch".into()));
        }
        let policy = TrlPolicy::new(ck.config, ck.encoder, ck.params)?;
        if *policy.net.shape() != ck.shape {
            return Err(Error::Data("checkpoint network shape mismatch".into()));
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// JSON tensor dump of a trained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: TrlConfig,
    pub shape: NetShape,
    pub encoder: Encoder,
    pub params: Vec<f64>,
}

fn indicator(a: Action) -> f64 {
    if a == Action::Treatment {
        1.0
    } else {
        0.0
    }
}

struct GreedySession<'a> {
    q: QSession<'a>,
    epsilon: f64,
}

impl AllocationSession for GreedySession<'_> {
    fn allocate(&mut self, history: &History) -> Result<f64> {
        let g = indicator(greedy_action(self.q.q_values(history)?));
        Ok(0.5 * self.epsilon + (1.0 - self.epsilon) * g)
    }
}

impl DesignPolicy for TrlPolicy {
    fn name(&self) -> &str {
        "TRL"
    }

    fn allocate(&self, history: &History) -> Result<f64> {
        Ok(indicator(greedy_action(self.q_values(history)?)))
    }

    fn session(&self) -> Option<Box<dyn AllocationSession + '_>> {
        let q = self.q_session().ok()?;
        Some(Box::new(GreedySession { q, epsilon: 0.0 }))
    }
}

/// ε-greedy view of a policy, as an allocation probability.
pub(crate) struct EpsilonGreedy<'a> {
    pub policy: &'a TrlPolicy,
    pub epsilon: f64,
}

impl DesignPolicy for EpsilonGreedy<'_> {
    fn name(&self) -> &str {
        "TRL-explore"
    }

    fn allocate(&self, history: &History) -> Result<f64> {
        let g = indicator(greedy_action(self.policy.q_values(history)?));
        Ok(0.5 * self.epsilon + (1.0 - self.epsilon) * g)
    }

    fn session(&self) -> Option<Box<dyn AllocationSession + '_>> {
        let q = self.policy.q_session().ok()?;
        Some(Box::new(GreedySession { q, epsilon: self.epsilon }))
    }
}

/// With probability ε a fair coin, otherwise the greedy action.
pub fn act(policy: &TrlPolicy, history: &History, epsilon: f64, rng: &mut Rng) -> Result<Action> {
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(if rng.random::<bool>() { Action::Treatment } else { Action::Control });
    }
    Ok(greedy_action(policy.q_values(history)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_action([0.3, 0.9]), Action::Treatment);
        assert_eq!(greedy_action([0.5, 0.5]), Action::Treatment);
        assert_eq!(greedy_action([0.9, 0.3]), Action::Control);
    }
}
