use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::designs::Bernoulli;
use crate::domain::{Action, Trajectory, Window};
use crate::env::{run_experiment, Simulator};
use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};

use super::encode::{Encoder, Normalizer};
use super::net::{QNet, TokenGraph};
use super::optim::{optimizer_step, soft_update, AdamW, TrainState};
use super::policy::{greedy_action, EpsilonGreedy, TrlPolicy};
use super::reward::RewardFn;
use super::TrlConfig;

/// One stored episode as encoded tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Token of completed step `t`.
    pub completed: Vec<Vec<f64>>,
    /// Token of the observation pending at step `t`.
    pub pending: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub phases: Vec<usize>,
}

impl Episode {
    pub fn encode(traj: &Trajectory, encoder: &Encoder, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != traj.len() {
            return Err(Error::DimensionMismatch { expected: traj.len(), got: rewards.len() });
        }
        let steps = traj.steps();
        Ok(Episode {
            completed: steps.iter().map(|s| encoder.completed_token(s)).collect::<Result<_>>()?,
            pending: steps.iter().map(|s| encoder.pending_token(s.observation.values())).collect::<Result<_>>()?,
            actions: steps.iter().map(|s| s.action).collect(),
            rewards,
            phases: (0..steps.len()).map(|t| encoder.phase(t)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Packs every state of an episode into one graph; returns the token index
/// of each state's pending observation. With an unbounded window all states
/// share the completed-step tokens; a finite window gets one segment per
/// state so each state sees exactly its own window.
pub fn episode_graph(ep: &Episode, window: Window) -> Result<(TokenGraph, Vec<usize>)> {
    let t_total = ep.len();
    let input = ep.pending.first().map_or(0, Vec::len);
    let mut g = TokenGraph::new(input);
    let mut states = Vec::with_capacity(t_total);
    match window {
        Window::Unbounded => {
            for j in 0..t_total.saturating_sub(1) {
                g.push(&ep.completed[j], j, ep.phases[j], (0..=j).collect())?;
            }
            for t in 0..t_total {
                let mut keys: Vec<usize> = (0..t).collect();
                keys.push(g.len());
                states.push(g.push(&ep.pending[t], t, ep.phases[t], keys)?);
            }
        }
        Window::Last(w) => {
            for t in 0..t_total {
                let start = t.saturating_sub(w);
                let base = g.len();
                for (k, j) in (start..t).enumerate() {
                    g.push(&ep.completed[j], k, ep.phases[j], (base..=base + k).collect())?;
                }
                let keys: Vec<usize> = (base..=g.len()).collect();
                states.push(g.push(&ep.pending[t], t - start, ep.phases[t], keys)?);
            }
        }
    }
    Ok((g, states))
}

/// Uniform replay over whole episodes, oldest evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: Vec<Episode>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity: capacity.max(1), episodes: Vec::new(), next: 0 }
    }

    pub fn push(&mut self, ep: Episode) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(ep);
        } else {
            self.episodes[self.next] = ep;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `k` episodes drawn with replacement.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Vec<&Episode> {
        if self.episodes.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| &self.episodes[rng.random_range(0..self.episodes.len())]).collect()
    }
}

/// `r` on terminal transitions, else `r + γ Q_target(s', argmax_a Q_online(s', a))`.
pub fn ddqn_target(reward: f64, done: bool, q_online_next: [f64; 2], q_target_next: [f64; 2], gamma: f64) -> f64 {
    if done {
        return reward;
    }
    reward + gamma * q_target_next[greedy_action(q_online_next).index()]
}

/// Mean squared TD error at the taken actions and its parameter gradient.
/// `samples` holds (token index, action, detached target).
pub fn td_loss_and_grads(
    net: &QNet,
    params: &[f64],
    graph: &TokenGraph,
    samples: &[(usize, Action, f64)],
) -> Result<(f64, Vec<f64>)> {
    let (q, cache) = net.forward_cached(params, graph)?;
    let n = samples.len().max(1) as f64;
    let mut dq = vec![[0.0; 2]; graph.len()];
    let mut loss = 0.0;
    for (b, &(i, a, y)) in samples.iter().enumerate() {
        let err = q[i][a.index()] - y;
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("TD error at batch index {b}")));
        }
        loss += err * err / n;
        dq[i][a.index()] += 2.0 * err / n;
    }
    Ok((loss, net.backward(params, graph, &cache, &dq)))
}

/// One gradient step over whole sampled episodes.
fn update(
    net: &QNet,
    state: &mut TrainState,
    batch: &[&Episode],
    cfg: &TrlConfig,
    opt: &AdamW,
) -> Result<f64> {
    let total: usize = batch.iter().map(|e| e.len()).sum();
    let mut grads = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    for ep in batch {
        let (graph, states) = episode_graph(ep, cfg.window)?;
        let q_online = net.forward(&state.online, &graph)?;
        let q_target = net.forward(&state.target, &graph)?;
        let samples: Vec<(usize, Action, f64)> = (0..ep.len())
            .map(|t| {
                let done = t + 1 == ep.len();
                let (qo, qt) = if done { ([0.0; 2], [0.0; 2]) } else { (q_online[states[t + 1]], q_target[states[t + 1]]) };
                (states[t], ep.actions[t], ddqn_target(ep.rewards[t], done, qo, qt, cfg.gamma_rl))
            })
            .collect();
        let (l, g) = td_loss_and_grads(net, &state.online, &graph, &samples)?;
        let w = ep.len() as f64 / total as f64;
        loss += w * l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            *acc += w * gi;
        }
    }
    optimizer_step(state, &mut grads, opt);
    soft_update(&mut state.target, &state.online, cfg.tau);
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    /// Mean undiscounted proxy return of the epoch's episodes.
    pub mean_return: f64,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_training_log(rows: &[TrainLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "return", "loss", "lr"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.mean_return.to_string(), r.loss.to_string(), r.lr.to_string()])
            ?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct TrainedAgent {
    pub policy: TrlPolicy,
    pub log: Vec<TrainLogRow>,
    pub state: TrainState,
}

/// Double-DQN training on episodes of `n_days` days.
///
/// Inputs are standardised with moments from `warmup_days` days of uniform
/// random allocation, frozen before learning starts. Each epoch rolls out
/// ε-greedy episodes, stores them, then takes `updates_per_epoch` gradient
/// steps each followed by a soft target update.
pub fn train(
    env: &dyn Simulator,
    reward: &dyn RewardFn,
    n_days: usize,
    config: &TrlConfig,
    streams: &Streams,
) -> Result<TrainedAgent> {
    config.validate()?;
    let m = env.intervals_per_day();
    if n_days * m > config.max_positions {
        return Err(Error::Config(format!("horizon {} exceeds max_positions {}", n_days * m, config.max_positions)));
    }
    let warm = run_experiment(env, config.warmup_days.max(1), &Bernoulli(0.5), &streams.child("trl-normalizer", 0))?;
    let encoder = Encoder { normalizer: Normalizer::fit(warm.steps())?, window: config.window, intervals_per_day: m };
    let net = QNet::new(config.shape(env.obs_dim(), m))?;
    let mut state = TrainState::new(net.init(&mut streams.rng("trl-init", 0)));
    let opt = AdamW::new(
        config.learning_rate,
        config.schedule_horizon.unwrap_or(config.total_updates()),
        config.weight_decay,
        config.clip_norm,
    );
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut sample_rng = streams.rng("trl-replay", 0);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let behaviour = TrlPolicy::new(config.clone(), encoder.clone(), state.online.clone())?;
        let explore = EpsilonGreedy { policy: &behaviour, epsilon: config.epsilon };
        let mut returns = 0.0;
        for e in 0..config.episodes_per_epoch {
            let idx = (epoch * config.episodes_per_epoch + e) as u64;
            let traj = run_experiment(env, n_days, &explore, &streams.child("trl-episode", idx))?;
            let r = reward.rewards(&traj)?;
            returns += r.iter().sum::<f64>();
            let scaled = r.iter().map(|v| v * config.reward_scale).collect();
            replay.push(Episode::encode(&traj, &encoder, scaled)?);
        }
        let mut loss = 0.0;
        for _ in 0..config.updates_per_epoch {
            let batch = replay.sample(config.batch_episodes, &mut sample_rng);
            loss += update(&net, &mut state, &batch, config, &opt)? / config.updates_per_epoch as f64;
        }
        let row = TrainLogRow {
            epoch,
            mean_return: returns / config.episodes_per_epoch as f64,
            loss,
            lr: state.lr,
        };
        log::debug!("epoch {} return {:.6} loss {:.6} lr {:.2e}", row.epoch, row.mean_return, row.loss, row.lr);
        log.push(row);
    }
    let policy = TrlPolicy::new(config.clone(), encoder, state.online.clone())?;
    Ok(TrainedAgent { policy, log, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{History, Observation, StepTriplet};
    use crate::trl::encode_history;
    use crate::trl::net::NetShape;

    #[test]
    fn ddqn_examples() {
        assert_eq!(ddqn_target(-0.3, true, [9.0, 9.0], [9.0, 9.0], 1.0), -0.3);
        assert_eq!(ddqn_target(0.0, false, [1.0, 2.0], [5.0, 7.0], 1.0), 7.0);
        assert_eq!(ddqn_target(0.5, false, [3.0, 2.0], [5.0, 7.0], 0.5), 3.0);
        // Identical networks: standard max backup.
        assert_eq!(ddqn_target(0.0, false, [4.0, 2.0], [4.0, 2.0], 1.0), 4.0);
    }

    fn small() -> (QNet, Encoder) {
        let shape = NetShape { input: 4, d_model: 8, n_layers: 2, n_heads: 2, ff_width: 16, max_positions: 32, phases: 3 };
        let enc = Encoder { normalizer: Normalizer::identity(2), window: Window::Unbounded, intervals_per_day: 3 };
        (QNet::new(shape).unwrap(), enc)
    }

    fn episode(enc: &Encoder, t: usize, rng: &mut Rng) -> (Trajectory, Episode) {
        let steps: Vec<_> = (0..t)
            .map(|_| {
                let o = Observation::from([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                let a = if rng.random::<bool>() { Action::Treatment } else { Action::Control };
                StepTriplet::new(o, a, rng.random_range(-1.0..1.0)).unwrap()
            })
            .collect();
        let traj = Trajectory::new(3, steps).unwrap();
        let ep = Episode::encode(&traj, enc, vec![0.1; t]).unwrap();
        (traj, ep)
    }

    #[test]
    fn packed_graph_matches_individual_histories() {
        let (net, enc) = small();
        let mut rng = Streams::new(4).rng("g", 0);
        let p = net.init_dense(&mut rng);
        let (traj, ep) = episode(&enc, 9, &mut rng);
        for window in [Window::Unbounded, Window::Last(2)] {
            let enc = Encoder { window, ..enc.clone() };
            let (g, states) = episode_graph(&ep, window).unwrap();
            let q = net.forward(&p, &g).unwrap();
            for t in 0..9 {
                let h = History::from_parts(traj.steps()[..t].to_vec(), traj.steps()[t].observation.clone()).unwrap();
                let seq = encode_history(&h, &enc).unwrap();
                let single = net.forward(&p, &seq.to_graph().unwrap()).unwrap();
                let last = single.last().unwrap();
                for a in 0..2 {
                    assert!((last[a] - q[states[t]][a]).abs() < 1e-12, "{window:?} t={t}");
                }
            }
        }
    }

    #[test]
    fn td_examples() {
        let (net, enc) = small();
        let mut rng = Streams::new(4).rng("g", 1);
        let mut p = net.init(&mut rng);
        let (_, ep) = episode(&enc, 4, &mut rng);
        let (g, states) = episode_graph(&ep, Window::Unbounded).unwrap();
        // Zero head: Q = 0 everywhere, so zero targets give zero loss and gradient.
        let zero: Vec<_> = (0..4).map(|t| (states[t], ep.actions[t], 0.0)).collect();
        let (l, grad) = td_loss_and_grads(&net, &p, &g, &zero).unwrap();
        assert_eq!(l, 0.0);
        assert!(grad.iter().all(|&x| x == 0.0));
        // Head bias 1 on the taken action: Q = 1, target 0, dL/dQ = 2.
        let a = ep.actions[0];
        let bias = net.n_params() - 2 + a.index();
        p[bias] = 1.0;
        let (l, grad) = td_loss_and_grads(&net, &p, &g, &[(states[0], a, 0.0)]).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert!((grad[bias] - 2.0).abs() < 1e-15);
        let bad = td_loss_and_grads(&net, &p, &g, &[(states[0], a, 0.0), (states[1], ep.actions[1], f64::NAN)]);
        assert!(matches!(bad, Err(Error::NonFinite(m)) if m.contains("batch index 1")));
    }

    #[test]
    fn replay_capacity() {
        let (_, enc) = small();
        let mut rng = Streams::new(4).rng("g", 2);
        let mut buf = ReplayBuffer::new(3);
        for _ in 0..5 {
            buf.push(episode(&enc, 3, &mut rng).1);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.sample(4, &mut rng).len(), 4);
    }
}
