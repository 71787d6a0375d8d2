//! Shared experiment types: observations, actions, histories, panels and the
//! allocation-policy interface every design implements.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Feature vector observed at the start of an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observation entry {v}")));
        }
        Ok(Observation(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Observation(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<[f64; 2]> for Observation {
    fn from(v: [f64; 2]) -> Self {
        Observation(v.to_vec())
    }
}

/// Binary allocation: control (-1) or treatment (+1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Control,
    Treatment,
}

impl Action {
    pub const BOTH: [Action; 2] = [Action::Control, Action::Treatment];

    /// Numeric coding used by every regression: -1 or +1.
    pub fn sign(self) -> f64 {
        match self {
            Action::Control => -1.0,
            Action::Treatment => 1.0,
        }
    }

    pub fn from_sign(sign: i64) -> Result<Self> {
        match sign {
            -1 => Ok(Action::Control),
            1 => Ok(Action::Treatment),
            other => Err(Error::invalid(format!("action must be -1 or +1, got {other}"))),
        }
    }

    /// Slot in two-valued outputs such as Q-vectors: control first.
    pub fn index(self) -> usize {
        match self {
            Action::Control => 0,
            Action::Treatment => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Control
        } else {
            Action::Treatment
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Action::Control => Action::Treatment,
            Action::Treatment => Action::Control,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTriplet {
    pub observation: Observation,
    pub action: Action,
    pub outcome: f64,
}

impl StepTriplet {
    pub fn new(observation: Observation, action: Action, outcome: f64) -> Result<Self> {
        if !outcome.is_finite() {
            return Err(Error::NonFinite(format!("outcome {outcome}")));
        }
        Ok(StepTriplet { observation, action, outcome })
    }
}

/// Completed triplets plus the observation awaiting an action.
///
/// At time `t` (1-based) the history holds `t - 1` triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    steps: Vec<StepTriplet>,
    pending: Observation,
}

impl History {
    pub fn new(pending: Observation) -> Self {
        History { steps: Vec::new(), pending }
    }

    pub fn from_parts(steps: Vec<StepTriplet>, pending: Observation) -> Result<Self> {
        let d = pending.dim();
        if let Some(s) = steps.iter().find(|s| s.observation.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: s.observation.dim() });
        }
        Ok(History { steps, pending })
    }

    pub fn steps(&self) -> &[StepTriplet] {
        &self.steps
    }

    pub fn pending(&self) -> &Observation {
        &self.pending
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// 1-based time index of the pending decision.
    pub fn time(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn last_action(&self) -> Option<Action> {
        self.steps.last().map(|s| s.action)
    }

    /// Completes the pending step and installs the next observation.
    pub fn advance(&mut self, action: Action, outcome: f64, next: Observation) {
        let observation = std::mem::replace(&mut self.pending, next);
        self.steps.push(StepTriplet { observation, action, outcome });
    }

    pub fn into_steps(self) -> Vec<StepTriplet> {
        self.steps
    }
}

/// Attention/history window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Window {
    #[default]
    Unbounded,
    Last(usize),
}

impl Window {
    pub fn validate(self) -> Result<Self> {
        match self {
            Window::Last(0) => Err(Error::invalid("history window must be >= 1")),
            w => Ok(w),
        }
    }

    /// Number of trailing triplets kept out of `len`.
    pub fn keep(self, len: usize) -> usize {
        match self {
            Window::Unbounded => len,
            Window::Last(w) => w.min(len),
        }
    }
}

/// Keeps the last `min(w, len)` triplets and the pending observation.
pub fn history_window(history: &History, window: Window) -> Result<History> {
    let window = window.validate()?;
    let keep = window.keep(history.len());
    let start = history.len() - keep;
    Ok(History { steps: history.steps[start..].to_vec(), pending: history.pending.clone() })
}

/// Flattened time series; `intervals_per_day` recovers the (day, interval) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    intervals_per_day: usize,
    steps: Vec<StepTriplet>,
}

impl Trajectory {
    pub fn new(intervals_per_day: usize, steps: Vec<StepTriplet>) -> Result<Self> {
        if intervals_per_day == 0 {
            return Err(Error::invalid("intervals per day must be positive"));
        }
        if let Some(first) = steps.first() {
            let d = first.observation.dim();
            if let Some(s) = steps.iter().find(|s| s.observation.dim() != d) {
                return Err(Error::DimensionMismatch { expected: d, got: s.observation.dim() });
            }
        }
        Ok(Trajectory { intervals_per_day, steps })
    }

    pub fn steps(&self) -> &[StepTriplet] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn intervals_per_day(&self) -> usize {
        self.intervals_per_day
    }

    pub fn obs_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.observation.dim())
    }

    pub fn complete_days(&self) -> usize {
        self.steps.len() / self.intervals_per_day
    }

    /// 0-based (day, interval) of a 0-based time index.
    pub fn day_interval(&self, index: usize) -> (usize, usize) {
        (index / self.intervals_per_day, index % self.intervals_per_day)
    }

    /// Trajectory truncated to the first `days` days.
    pub fn prefix_days(&self, days: usize) -> Trajectory {
        let end = (days * self.intervals_per_day).min(self.steps.len());
        Trajectory { intervals_per_day: self.intervals_per_day, steps: self.steps[..end].to_vec() }
    }

    /// Inverse of [`flatten_panel`]; requires whole days.
    pub fn to_panel(&self) -> Result<PanelData> {
        if self.steps.is_empty() {
            return Err(Error::EmptyPanel);
        }
        if self.steps.len() % self.intervals_per_day != 0 {
            return Err(Error::invalid(format!(
                "trajectory of length {} does not split into days of {}",
                self.steps.len(),
                self.intervals_per_day
            )));
        }
        PanelData::new(self.complete_days(), self.intervals_per_day, self.steps.clone())
    }
}

/// Day × interval grid of triplets stored day-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    n_days: usize,
    intervals_per_day: usize,
    cells: Vec<StepTriplet>,
}

impl PanelData {
    pub fn new(n_days: usize, intervals_per_day: usize, cells: Vec<StepTriplet>) -> Result<Self> {
        if n_days == 0 || intervals_per_day == 0 || cells.is_empty() {
            return Err(Error::EmptyPanel);
        }
        if cells.len() != n_days * intervals_per_day {
            return Err(Error::invalid(format!(
                "panel {n_days}x{intervals_per_day} needs {} cells, got {}",
                n_days * intervals_per_day,
                cells.len()
            )));
        }
        Ok(PanelData { n_days, intervals_per_day, cells })
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn intervals_per_day(&self) -> usize {
        self.intervals_per_day
    }

    /// 0-based day and interval.
    pub fn cell(&self, day: usize, interval: usize) -> &StepTriplet {
        &self.cells[day * self.intervals_per_day + interval]
    }

    pub fn cells(&self) -> &[StepTriplet] {
        &self.cells
    }
}

/// Flattens day `i`, interval `m` (1-based) to time `t = (i - 1) M + m`.
pub fn flatten_panel(panel: &PanelData) -> Result<Trajectory> {
    if panel.cells.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Trajectory::new(panel.intervals_per_day, panel.cells.clone())
}

/// Draws +1 with probability `p`.
pub fn sample_action(p: f64, rng: &mut Rng) -> Result<Action> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("allocation probability {p} outside [0, 1]")));
    }
    let u: f64 = rng.random();
    Ok(if u < p { Action::Treatment } else { Action::Control })
}

/// Maps a history to the probability of assigning +1.
pub trait DesignPolicy: Send + Sync {
    fn name(&self) -> &str;

    fn allocate(&self, history: &History) -> Result<f64>;

    /// Stateful evaluator for sequential rollouts, where a policy can reuse
    /// work across the growing history. `None` means call [`allocate`](Self::allocate).
    fn session(&self) -> Option<Box<dyn AllocationSession + '_>> {
        None
    }
}

/// Incremental allocator driven by a single growing history.
pub trait AllocationSession {
    fn allocate(&mut self, history: &History) -> Result<f64>;
}

struct Stateless<'a>(&'a dyn DesignPolicy);

impl AllocationSession for Stateless<'_> {
    fn allocate(&mut self, history: &History) -> Result<f64> {
        self.0.allocate(history)
    }
}

/// Session for `policy`, falling back to stateless calls.
pub fn start_session(policy: &dyn DesignPolicy) -> Box<dyn AllocationSession + '_> {
    policy.session().unwrap_or_else(|| Box::new(Stateless(policy)))
}

pub(crate) fn check_probability(p: f64, what: &str) -> Result<f64> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::invalid(format!("{what} produced probability {p}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn triplet(v: f64, a: Action) -> StepTriplet {
        StepTriplet::new(Observation::from([v, -v]), a, v * 2.0).unwrap()
    }

    fn panel(n: usize, m: usize) -> PanelData {
        let cells = (0..n * m)
            .map(|k| triplet(k as f64, if k % 3 == 0 { Action::Treatment } else { Action::Control }))
            .collect();
        PanelData::new(n, m, cells).unwrap()
    }

    #[test]
    fn flatten_uses_day_major_order() {
        let p = panel(2, 3);
        let traj = flatten_panel(&p).unwrap();
        // day 2, interval 1 (1-based) is t = 4
        assert_eq!(&traj.steps()[3], p.cell(1, 0));
        assert_eq!(traj.day_interval(3), (1, 0));
    }

    #[test]
    fn single_cell_panel() {
        let traj = flatten_panel(&panel(1, 1)).unwrap();
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn empty_panel_rejected() {
        assert!(matches!(PanelData::new(0, 3, vec![]), Err(Error::EmptyPanel)));
        assert!(Trajectory::new(3, vec![]).unwrap().to_panel().is_err());
    }

    #[test]
    fn round_trip() {
        let p = panel(3, 4);
        assert_eq!(flatten_panel(&p).unwrap().to_panel().unwrap(), p);
    }

    #[test]
    fn window_behaviour() {
        let mut h = History::new(Observation::from([0.0, 0.0]));
        for k in 0..10 {
            h.advance(Action::Treatment, k as f64, Observation::from([k as f64, 0.0]));
        }
        assert_eq!(history_window(&h, Window::Unbounded).unwrap(), h);
        let w = history_window(&h, Window::Last(6)).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w.steps()[0].outcome, 4.0);
        assert_eq!(w.pending(), h.pending());
        assert!(history_window(&h, Window::Last(0)).is_err());

        let mut short = History::new(Observation::zeros(2));
        for _ in 0..3 {
            short.advance(Action::Control, 0.0, Observation::zeros(2));
        }
        assert_eq!(history_window(&short, Window::Last(12)).unwrap().len(), 3);
    }

    #[test]
    fn sample_action_extremes_and_frequency() {
        let mut rng = Streams::new(5).rng("test", 0);
        for _ in 0..1000 {
            assert_eq!(sample_action(1.0, &mut rng).unwrap(), Action::Treatment);
            assert_eq!(sample_action(0.0, &mut rng).unwrap(), Action::Control);
        }
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_action(0.5, &mut rng).unwrap() == Action::Treatment).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
        assert!(sample_action(1.5, &mut rng).is_err());
        assert!(sample_action(-0.1, &mut rng).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(Observation::new(vec![f64::NAN]).is_err());
        assert!(StepTriplet::new(Observation::zeros(1), Action::Control, f64::INFINITY).is_err());
    }
}
