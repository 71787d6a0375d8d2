//! Learned allocation: a causal transformer Q-network over the experiment
//! history, trained by double DQN on a proxy for the estimator's squared
//! error.

mod encode;
mod net;
mod optim;
mod policy;
mod reward;
pub mod sanity;
mod train;

pub use encode::{encode_history, Encoder, Normalizer, TokenSequence};
pub use net::{layer_norm_moments, ForwardCache, KvCache, NetShape, ParamGroup, QNet, TokenGraph};
pub use optim::{clip_global_norm, cosine_lr, optimizer_step, soft_update, AdamW, TrainState};
pub use policy::{act, greedy_action, Checkpoint, QSession, TrlPolicy, CHECKPOINT_VERSION};
pub use reward::{proxy_reward, ProxyMseReward, RewardFn};
pub use train::{
    ddqn_target, episode_graph, td_loss_and_grads, train, write_training_log, Episode, ReplayBuffer, TrainLogRow,
    TrainedAgent,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Window;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Reward at the end of each day.
    #[default]
    DayEnd,
    /// Reward after every interval.
    PerStep,
}

/// Network, reward and optimisation settings of the learned design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrlConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Defaults to `4 * d_model`.
    pub ff_width: Option<usize>,
    pub max_positions: usize,
    /// Adds a learned interval-of-day embedding to every token.
    pub phase_encoding: bool,
    /// Reward discount across days.
    pub alpha: f64,
    pub gamma_rl: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub warmup_days: usize,
    pub window: Window,
    pub reward_mode: RewardMode,
    /// Multiplies proxy rewards before they reach the Q-targets.
    pub reward_scale: f64,
    pub learning_rate: f64,
    /// Optimizer steps until the learning rate reaches zero; defaults to the
    /// total number of updates.
    pub schedule_horizon: Option<usize>,
    pub clip_norm: f64,
    pub weight_decay: f64,
    /// Replay capacity in episodes.
    pub replay_capacity: usize,
    /// Episodes per gradient step; every transition of a sampled episode
    /// enters the batch.
    pub batch_episodes: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub updates_per_epoch: usize,
}

impl Default for TrlConfig {
    fn default() -> Self {
        TrlConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ff_width: None,
            max_positions: 512,
            phase_encoding: true,
            alpha: 0.8,
            gamma_rl: 1.0,
            epsilon: 0.10,
            tau: 0.005,
            warmup_days: 7,
            window: Window::Unbounded,
            reward_mode: RewardMode::DayEnd,
            reward_scale: 1.0,
            learning_rate: 3e-4,
            schedule_horizon: None,
            clip_norm: 1.0,
            weight_decay: 1e-4,
            replay_capacity: 500,
            batch_episodes: 2,
            epochs: 300,
            episodes_per_epoch: 1,
            updates_per_epoch: 4,
        }
    }
}

impl TrlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma_rl) {
            return bad(format!("gamma_rl {} outside [0, 1]", self.gamma_rl));
        }
        let widths = [
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.ff_width(),
            self.max_positions,
            self.replay_capacity,
            self.batch_episodes,
            self.episodes_per_epoch,
        ];
        if widths.contains(&0) {
            return bad("all widths and counts must be >= 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if let Window::Last(0) = self.window {
            return bad("attention window must be >= 1".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("weight_decay", self.weight_decay),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if self.clip_norm == 0.0 || self.reward_scale == 0.0 {
            return bad("clip_norm and reward_scale must be positive".into());
        }
        Ok(())
    }

    pub fn ff_width(&self) -> usize {
        self.ff_width.unwrap_or(4 * self.d_model)
    }

    pub fn total_updates(&self) -> usize {
        self.epochs * self.updates_per_epoch
    }

    pub fn shape(&self, obs_dim: usize, intervals_per_day: usize) -> NetShape {
        NetShape {
            input: obs_dim + 2,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ff_width: self.ff_width(),
            max_positions: self.max_positions,
            phases: if self.phase_encoding { intervals_per_day } else { 0 },
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrlConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ff_width(), 256);
        assert_eq!(c.hash(), TrlConfig::default().hash());
        for bad in [
            TrlConfig { alpha: 1.0, ..c.clone() },
            TrlConfig { tau: 0.0, ..c.clone() },
            TrlConfig { epsilon: 1.5, ..c.clone() },
            TrlConfig { n_heads: 3, ..c.clone() },
            TrlConfig { window: Window::Last(0), ..c.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn toml_round_trip() {
        let c: TrlConfig = toml::from_str("d_model = 32\nwindow = { Last = 6 }\nreward_mode = \"per-step\"").unwrap();
        assert_eq!(c.d_model, 32);
        assert_eq!(c.window, Window::Last(6));
        assert_eq!(c.reward_mode, RewardMode::PerStep);
        assert!(toml::from_str::<TrlConfig>("d_modle = 3").is_err());
    }
}
