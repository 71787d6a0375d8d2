//! Grid-world ride-hailing dispatch simulator.
//!
//! Orders spawn from a space-time Gaussian mixture, wait until a truncated
//! Gaussian deadline, and are matched to idle drivers within a pickup radius.
//! The action selects the matcher: +1 maximizes revenue plus learned driver
//! value, −1 minimizes total pickup distance.

mod matching;
mod surrogate;
mod value;

pub use matching::{
    feasible_pairs, hungarian, manhattan, match_distance, match_mdp, match_sinkhorn, min_cost_matching, Edge,
    SinkhornMatch,
};
pub use surrogate::{fit_surrogate, collect_surrogate_data, SurrogateEnv, SurrogateModel, SurrogateStep};
pub use value::{learn_value, train_value_table, DriverTransition, ValueTable};

use std::path::Path;

use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Observation};
use crate::env::{DaySim, Simulator};
use crate::error::{Error, Result};
use crate::rng::{Rng, Streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    #[default]
    Exact,
    Sinkhorn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub grid_size: u32,
    pub horizon: usize,
    pub radius: u32,
    pub drivers: usize,
    pub orders_per_day: usize,
    pub cancel_mean: f64,
    pub cancel_sd: f64,
    pub cancel_max: f64,
    pub gmm_weights: Vec<f64>,
    /// `(x, y, t)` per component.
    pub gmm_means: Vec<[f64; 3]>,
    pub gmm_sds: Vec<[f64; 3]>,
    pub price_base: f64,
    pub price_per_cell: f64,
    /// Discount for driver values in the revenue-value matcher and in TD learning.
    pub discount: f64,
    pub matcher: Matcher,
    pub sinkhorn_regularization: f64,
    pub sinkhorn_iterations: usize,
    /// Distance-matcher days used to learn the value table.
    pub value_days: usize,
    pub value_learning_rate: f64,
    pub value_sweeps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            grid_size: 9,
            horizon: 20,
            radius: 2,
            drivers: 25,
            orders_per_day: 100,
            cancel_mean: 2.5,
            cancel_sd: 0.5,
            cancel_max: 3.0,
            gmm_weights: vec![1.0 / 3.0, 2.0 / 3.0],
            gmm_means: vec![[3.0, 3.0, 2.0], [6.0, 6.0, 14.0]],
            gmm_sds: vec![[2.0, 2.0, 2.0], [2.0, 2.0, 2.0]],
            price_base: 1.0,
            price_per_cell: 0.3,
            discount: 0.9,
            matcher: Matcher::Exact,
            sinkhorn_regularization: 0.05,
            sinkhorn_iterations: 300,
            value_days: 200,
            value_learning_rate: 0.05,
            value_sweeps: 5,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.gmm_weights.len();
        if k == 0 || self.gmm_means.len() != k || self.gmm_sds.len() != k {
            return Err(Error::Config("mixture weights, means and sds must have equal nonzero length".into()));
        }
        if (self.gmm_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.gmm_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("mixture weights must be nonnegative and sum to 1".into()));
        }
        if self.gmm_sds.iter().flatten().any(|&s| !(s > 0.0)) || !(self.cancel_sd > 0.0) {
            return Err(Error::Config("standard deviations must be positive".into()));
        }
        if self.grid_size == 0 || self.horizon == 0 || self.drivers == 0 {
            return Err(Error::Config("grid size, horizon and fleet must be positive".into()));
        }
        if !(self.cancel_max > 0.0) {
            return Err(Error::Config("cancellation support must be [0, cancel_max] with cancel_max > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn price(&self, trip: u32) -> f64 {
        self.price_base + self.price_per_cell * trip as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: usize,
    pub origin: (u32, u32),
    pub destination: (u32, u32),
    pub spawn: usize,
    /// Last (real-valued) time at which the order may still be matched.
    pub deadline: f64,
    pub price: f64,
    pub matched_at: Option<usize>,
}

impl Order {
    pub fn is_alive(&self, t: usize) -> bool {
        self.matched_at.is_none() && self.spawn <= t && t as f64 <= self.deadline
    }

    pub fn trip_length(&self) -> u32 {
        manhattan(self.origin, self.destination)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub id: usize,
    pub position: (u32, u32),
    /// First step at which the driver is idle again.
    pub busy_until: usize,
}

impl Driver {
    pub fn is_idle(&self, t: usize) -> bool {
        self.busy_until <= t
    }
}

/// One mixture draw before rounding: component and integer `(x, y, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpawnDraw {
    pub component: usize,
    pub x: u32,
    pub y: u32,
    pub t: usize,
}

/// Inverse-CDF draw from `N(mean, sd²)` restricted to `[lo, hi]`.
fn truncated_normal(rng: &mut Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let n = StatNormal::new(mean, sd).expect("positive sd");
    let (a, b) = (n.cdf(lo), n.cdf(hi));
    if b - a <= f64::EPSILON {
        // All mass is numerically beyond one bound.
        return if mean < lo { lo } else { hi };
    }
    let u: f64 = rng.random();
    n.inverse_cdf(a + u * (b - a)).clamp(lo, hi)
}

/// Component first, then each coordinate from its Gaussian truncated by
/// rejection to the box of half-open unit bins around the grid cells and
/// steps, rounded to the nearest cell and step.
pub fn sample_spawn(config: &GridConfig, rng: &mut Rng) -> SpawnDraw {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut component = config.gmm_weights.len() - 1;
    for (k, w) in config.gmm_weights.iter().enumerate() {
        acc += w;
        if u < acc {
            component = k;
            break;
        }
    }
    let (m, s) = (config.gmm_means[component], config.gmm_sds[component]);
    let top = (config.grid_size - 1) as f64;
    let last = (config.horizon - 1) as f64;
    let mut coord = |mean: f64, sd: f64, hi: f64| truncated_normal(rng, mean, sd, -0.5, hi + 0.5).round().clamp(0.0, hi);
    let x = coord(m[0], s[0], top) as u32;
    let y = coord(m[1], s[1], top) as u32;
    let t = coord(m[2], s[2], last) as usize;
    SpawnDraw { component, x, y, t }
}

/// Patience before cancellation, truncated Gaussian on `[0, cancel_max]`.
pub fn cancellation_time(config: &GridConfig, rng: &mut Rng) -> f64 {
    truncated_normal(rng, config.cancel_mean, config.cancel_sd, 0.0, config.cancel_max)
}

/// The day's orders, sorted by spawn time; destinations uniform on the grid.
pub fn sample_day_orders(config: &GridConfig, rng: &mut Rng) -> Vec<Order> {
    let mut orders: Vec<Order> = (0..config.orders_per_day)
        .map(|_| {
            let s = sample_spawn(config, rng);
            let destination = (rng.random_range(0..config.grid_size), rng.random_range(0..config.grid_size));
            let patience = cancellation_time(config, rng);
            let origin = (s.x, s.y);
            let price = config.price(manhattan(origin, destination));
            Order { id: 0, origin, destination, spawn: s.t, deadline: s.t as f64 + patience, price, matched_at: None }
        })
        .collect();
    orders.sort_by_key(|o| o.spawn);
    for (i, o) in orders.iter_mut().enumerate() {
        o.id = i;
    }
    orders
}

/// Orders whose spawn step is `t`.
pub fn spawn_orders(orders: &[Order], t: usize) -> Vec<&Order> {
    orders.iter().filter(|o| o.spawn == t).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub active_orders: usize,
    pub idle_drivers: usize,
    pub action: i64,
    pub revenue: f64,
    pub matches: usize,
}

pub fn write_trace(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mutable state of one simulated day.
#[derive(Clone, Debug)]
pub struct World<'a> {
    config: &'a GridConfig,
    value: &'a ValueTable,
    orders: Vec<Order>,
    drivers: Vec<Driver>,
    t: usize,
    trace: Vec<StepRecord>,
    transitions: Option<Vec<DriverTransition>>,
}

impl<'a> World<'a> {
    pub fn new(config: &'a GridConfig, value: &'a ValueTable, rng: &mut Rng) -> Self {
        let orders = sample_day_orders(config, rng);
        let drivers = (0..config.drivers)
            .map(|id| Driver {
                id,
                position: (rng.random_range(0..config.grid_size), rng.random_range(0..config.grid_size)),
                busy_until: 0,
            })
            .collect();
        World { config, value, orders, drivers, t: 0, trace: Vec::new(), transitions: None }
    }

    /// Records driver-level transitions for value learning.
    pub fn record_transitions(&mut self) {
        self.transitions = Some(Vec::new());
    }

    pub fn take_transitions(&mut self) -> Vec<DriverTransition> {
        self.transitions.take().unwrap_or_default()
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn orders(&self) -> &[Order] {
        &self.orders
    }

    pub fn drivers(&self) -> &[Driver] {
        &self.drivers
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn alive_orders(&self) -> usize {
        self.orders.iter().filter(|o| o.is_alive(self.t)).count()
    }

    pub fn idle_drivers(&self) -> usize {
        self.drivers.iter().filter(|d| d.is_idle(self.t)).count()
    }

    /// `(alive orders, idle drivers)` at the current step, before matching.
    pub fn summary(&self) -> [f64; 2] {
        [self.alive_orders() as f64, self.idle_drivers() as f64]
    }

    pub fn edges(&self) -> Vec<Edge> {
        feasible_pairs(&self.drivers, &self.orders, self.t, self.config.radius)
    }

    /// Revenue-plus-value weight of each edge at the current step.
    pub fn mdp_weights(&self, edges: &[Edge]) -> Vec<f64> {
        edges
            .iter()
            .map(|e| {
                let o = &self.orders[e.order];
                let d = &self.drivers[e.driver];
                let dur = o.trip_length().max(1) as usize;
                o.price + self.config.discount.powi(dur as i32) * self.value.get(o.destination, self.t + dur)
                    - self.value.get(d.position, self.t)
            })
            .collect()
    }

    /// Assignment the given action would make now.
    pub fn plan(&self, action: Action) -> Result<Vec<(usize, usize)>> {
        let edges = self.edges();
        match (self.config.matcher, action) {
            (Matcher::Exact, Action::Treatment) => Ok(match_mdp(&edges, &self.mdp_weights(&edges))),
            (Matcher::Exact, Action::Control) => Ok(match_distance(&edges)),
            (Matcher::Sinkhorn, a) => self.plan_sinkhorn(&edges, a),
        }
    }

    fn plan_sinkhorn(&self, edges: &[Edge], action: Action) -> Result<Vec<(usize, usize)>> {
        if edges.is_empty() {
            return Ok(Vec::new());
        }
        let mut rows: Vec<usize> = edges.iter().map(|e| e.driver).collect();
        let mut cols: Vec<usize> = edges.iter().map(|e| e.order).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        let mut cost = vec![vec![f64::INFINITY; cols.len()]; rows.len()];
        let weights = self.mdp_weights(edges);
        for (k, e) in edges.iter().enumerate() {
            let i = rows.binary_search(&e.driver).expect("row");
            let j = cols.binary_search(&e.order).expect("col");
            cost[i][j] = match action {
                Action::Treatment => -weights[k],
                Action::Control => e.distance as f64,
            };
        }
        let unmatched = match action {
            Action::Treatment => 0.0,
            Action::Control => self.config.radius as f64 + 1.0,
        };
        let s = match_sinkhorn(&cost, self.config.sinkhorn_regularization, self.config.sinkhorn_iterations, Some(unmatched))?;
        if !s.converged {
            log::debug!("Sinkhorn stopped at marginal error {:.2e}", s.marginal_error);
        }
        Ok(s.assignment.into_iter().map(|(i, j)| (rows[i], cols[j])).collect())
    }

    /// Matches under `action`, repositions the remaining idle drivers and
    /// advances one step. Returns the step revenue.
    pub fn step(&mut self, action: Action) -> Result<f64> {
        let t = self.t;
        if t >= self.config.horizon {
            return Err(Error::DayTerminated(t));
        }
        let active_orders = self.alive_orders();
        let idle_drivers = self.idle_drivers();
        let assignment = self.plan(action)?;
        let mut revenue = 0.0;
        let mut matched = vec![false; self.drivers.len()];
        for &(d, o) in &assignment {
            let order = &mut self.orders[o];
            debug_assert!(order.is_alive(t));
            order.matched_at = Some(t);
            let dur = order.trip_length().max(1) as usize;
            let driver = &mut self.drivers[d];
            if let Some(tr) = self.transitions.as_mut() {
                tr.push(DriverTransition {
                    cell: driver.position,
                    t,
                    reward: order.price,
                    next_cell: order.destination,
                    next_t: t + dur,
                });
            }
            driver.position = order.destination;
            driver.busy_until = t + dur;
            revenue += order.price;
            matched[d] = true;
        }
        self.reposition(t, &matched);
        self.trace.push(StepRecord {
            t,
            active_orders,
            idle_drivers,
            action: action.sign() as i64,
            revenue,
            matches: assignment.len(),
        });
        self.t += 1;
        Ok(revenue)
    }

    /// Each idle, unmatched driver moves to the 4-neighbour holding the most
    /// alive orders if that count is unique and beats its own cell.
    fn reposition(&mut self, t: usize, matched: &[bool]) {
        let n = self.config.grid_size;
        let mut counts = vec![0usize; (n * n) as usize];
        for o in self.orders.iter().filter(|o| o.is_alive(t)) {
            counts[(o.origin.0 * n + o.origin.1) as usize] += 1;
        }
        let at = |p: (u32, u32)| counts[(p.0 * n + p.1) as usize];
        for (i, d) in self.drivers.iter_mut().enumerate() {
            if matched[i] || !d.is_idle(t) {
                continue;
            }
            let (x, y) = d.position;
            let mut neighbours = Vec::with_capacity(4);
            if x > 0 {
                neighbours.push((x - 1, y));
            }
            if x + 1 < n {
                neighbours.push((x + 1, y));
            }
            if y > 0 {
                neighbours.push((x, y - 1));
            }
            if y + 1 < n {
                neighbours.push((x, y + 1));
            }
            let best = neighbours.iter().map(|&p| at(p)).max().unwrap_or(0);
            let winners: Vec<_> = neighbours.iter().filter(|&&p| at(p) == best).collect();
            let next = if winners.len() == 1 && best > at(d.position) { *winners[0] } else { d.position };
            if let Some(tr) = self.transitions.as_mut() {
                tr.push(DriverTransition { cell: d.position, t, reward: 0.0, next_cell: next, next_t: t + 1 });
            }
            d.position = next;
        }
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }
}

/// Dispatch world as an experiment environment, with a value table learned
/// from distance-matcher days.
#[derive(Clone, Debug)]
pub struct DispatchEnv {
    config: GridConfig,
    value: ValueTable,
}

impl DispatchEnv {
    pub fn new(config: GridConfig, streams: &Streams) -> Result<Self> {
        config.validate()?;
        let value = train_value_table(&config, streams)?;
        Ok(DispatchEnv { config, value })
    }

    pub fn with_value(config: GridConfig, value: ValueTable) -> Result<Self> {
        config.validate()?;
        Ok(DispatchEnv { config, value })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn value(&self) -> &ValueTable {
        &self.value
    }

    pub fn world(&self, mut rng: Rng) -> World<'_> {
        World::new(&self.config, &self.value, &mut rng)
    }
}

impl Simulator for DispatchEnv {
    fn name(&self) -> String {
        "dispatch".into()
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn intervals_per_day(&self) -> usize {
        self.config.horizon
    }

    fn start_day(&self, rng: Rng) -> Box<dyn DaySim + '_> {
        Box::new(self.world(rng))
    }
}

impl DaySim for World<'_> {
    fn observation(&self) -> Observation {
        Observation::from(self.summary())
    }

    fn step(&mut self, action: Action) -> Result<f64> {
        World::step(self, action)
    }

    fn steps_taken(&self) -> usize {
        self.t
    }

    fn is_done(&self) -> bool {
        World::is_done(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GridConfig {
        GridConfig::default()
    }

    #[test]
    fn spawn_support_and_component_share() {
        let c = cfg();
        let mut rng = Streams::new(1).rng("spawn", 0);
        let n = 20_000;
        let mut first = 0;
        let mut hist = vec![0usize; c.horizon];
        for _ in 0..n {
            let s = sample_spawn(&c, &mut rng);
            assert!(s.x <= 8 && s.y <= 8 && s.t <= 19);
            first += usize::from(s.component == 0);
            hist[s.t] += 1;
        }
        let share = first as f64 / n as f64;
        assert!((share - 1.0 / 3.0).abs() < 0.02, "{share}");
        let peak_early = (0..8).max_by_key(|&t| hist[t]).unwrap();
        let peak_late = (8..20).max_by_key(|&t| hist[t]).unwrap();
        assert!((1..=3).contains(&peak_early), "{hist:?}");
        assert!((13..=15).contains(&peak_late), "{hist:?}");
        assert!(hist[8] < hist[peak_early] && hist[8] < hist[peak_late]);
    }

    #[test]
    fn feasibility_examples() {
        let d = |x, y, busy| Driver { id: 0, position: (x, y), busy_until: busy };
        let o = |x, y| Order { id: 0, origin: (x, y), destination: (0, 0), spawn: 0, deadline: 2.0, price: 1.0, matched_at: None };
        assert_eq!(feasible_pairs(&[d(0, 0, 0)], &[o(1, 1)], 0, 2).len(), 1);
        assert!(feasible_pairs(&[d(0, 0, 0)], &[o(2, 1)], 0, 2).is_empty());
        assert!(feasible_pairs(&[d(0, 0, 3)], &[o(1, 1)], 0, 2).is_empty());
        assert!(feasible_pairs(&[d(0, 0, 0)], &[o(1, 1)], 3, 2).is_empty());
    }

    #[test]
    fn world_invariants_over_a_day() {
        let c = cfg();
        let v = ValueTable::zeros(&c);
        for seed in 0..5 {
            let mut w = World::new(&c, &v, &mut Streams::new(seed).env_day(0));
            let mut total = 0.0;
            while !w.is_done() {
                let (alive, idle) = (w.alive_orders(), w.idle_drivers());
                let a = if w.time() % 2 == 0 { Action::Treatment } else { Action::Control };
                let t = w.time();
                let y = w.step(a).unwrap();
                assert!(y >= 0.0);
                total += y;
                let rec = w.trace().last().unwrap();
                assert!(rec.matches <= alive.min(idle));
                for o in w.orders().iter().filter(|o| o.matched_at == Some(t)) {
                    assert!(t as f64 <= o.deadline && o.spawn <= t);
                }
            }
            assert!(total > 0.0);
            assert_eq!(w.drivers().len(), 25);
        }
    }

    #[test]
    fn zero_value_actions_share_exogenous_draws() {
        let c = cfg();
        let v = ValueTable::zeros(&c);
        let a = World::new(&c, &v, &mut Streams::new(4).env_day(2));
        let b = World::new(&c, &v, &mut Streams::new(4).env_day(2));
        assert_eq!(a.orders(), b.orders());
        assert_eq!(a.drivers(), b.drivers());
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let c = GridConfig { horizon: 1, ..cfg() };
        let v = ValueTable::zeros(&c);
        let mut w = World::new(&c, &v, &mut Streams::new(0).env_day(0));
        w.step(Action::Control).unwrap();
        assert!(matches!(w.step(Action::Control), Err(Error::DayTerminated(1))));
    }
}
