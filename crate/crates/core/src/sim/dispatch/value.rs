use serde::{Deserialize, Serialize};

use super::{GridConfig, World};
use crate::domain::Action;
use crate::error::Result;
use crate::rng::Streams;

/// Tabular driver value over `(x, y, t)`; zero at and beyond the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    grid_size: u32,
    horizon: usize,
    values: Vec<f64>,
}

/// One driver's move: matched (reward = price, lands at the destination
/// when the trip ends) or idle (reward 0, one step).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverTransition {
    pub cell: (u32, u32),
    pub t: usize,
    pub reward: f64,
    pub next_cell: (u32, u32),
    pub next_t: usize,
}

impl ValueTable {
    pub fn zeros(config: &GridConfig) -> Self {
        let n = config.grid_size as usize;
        ValueTable { grid_size: config.grid_size, horizon: config.horizon, values: vec![0.0; n * n * config.horizon] }
    }

    fn index(&self, cell: (u32, u32), t: usize) -> usize {
        ((cell.0 * self.grid_size + cell.1) as usize) * self.horizon + t
    }

    pub fn get(&self, cell: (u32, u32), t: usize) -> f64 {
        if t >= self.horizon {
            0.0
        } else {
            self.values[self.index(cell, t)]
        }
    }

    pub fn set(&mut self, cell: (u32, u32), t: usize, v: f64) {
        let i = self.index(cell, t);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// TD(0) sweeps over a fixed set of transitions, updating
/// `V(s) ← V(s) + lr · (r + discount^{Δt} V(s') − V(s))`.
pub fn learn_value(
    config: &GridConfig,
    transitions: &[DriverTransition],
    learning_rate: f64,
    discount: f64,
    sweeps: usize,
) -> ValueTable {
    let mut v = ValueTable::zeros(config);
    for _ in 0..sweeps {
        for tr in transitions {
            let next = v.get(tr.next_cell, tr.next_t);
            let target = tr.reward + discount.powi((tr.next_t - tr.t) as i32) * next;
            let cur = v.get(tr.cell, tr.t);
            v.set(tr.cell, tr.t, cur + learning_rate * (target - cur));
        }
    }
    v
}

/// Runs `config.value_days` distance-matcher days and learns the table from
/// their driver transitions.
pub fn train_value_table(config: &GridConfig, streams: &Streams) -> Result<ValueTable> {
    let zero = ValueTable::zeros(config);
    let mut transitions = Vec::new();
    for day in 0..config.value_days {
        let mut w = World::new(config, &zero, &mut streams.rng("value-day", day as u64));
        w.record_transitions();
        while !w.is_done() {
            w.step(Action::Control)?;
        }
        transitions.extend(w.take_transitions());
    }
    Ok(learn_value(config, &transitions, config.value_learning_rate, config.discount, config.value_sweeps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GridConfig {
        GridConfig { grid_size: 2, horizon: 3, ..GridConfig::default() }
    }

    #[test]
    fn zero_rewards_give_zero_table() {
        let c = small();
        let tr = DriverTransition { cell: (0, 0), t: 0, reward: 0.0, next_cell: (1, 0), next_t: 1 };
        assert!(learn_value(&c, &[tr; 4], 0.5, 0.9, 10).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_transition_fixed_point() {
        let c = small();
        let tr = DriverTransition { cell: (0, 1), t: 1, reward: 2.5, next_cell: (1, 1), next_t: 2 };
        let v = learn_value(&c, &[tr], 0.3, 0.0, 200);
        assert!((v.get((0, 1), 1) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn two_cell_chain_matches_bellman() {
        // (0,0)@0 → (1,0)@1 with reward 1, then (1,0)@1 → (0,0)@2 reward 3,
        // (0,0)@2 terminal after reward 0.5.
        let c = small();
        let chain = [
            DriverTransition { cell: (0, 0), t: 0, reward: 1.0, next_cell: (1, 0), next_t: 1 },
            DriverTransition { cell: (1, 0), t: 1, reward: 3.0, next_cell: (0, 0), next_t: 2 },
            DriverTransition { cell: (0, 0), t: 2, reward: 0.5, next_cell: (0, 0), next_t: 3 },
        ];
        let g = 0.9;
        let v = learn_value(&c, &chain, 0.1, g, 500);
        let v2 = 0.5;
        let v1 = 3.0 + g * v2;
        let v0 = 1.0 + g * v1;
        assert!((v.get((0, 0), 2) - v2).abs() < 1e-3);
        assert!((v.get((1, 0), 1) - v1).abs() < 1e-3);
        assert!((v.get((0, 0), 0) - v0).abs() < 1e-3);
    }
}
