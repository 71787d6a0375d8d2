//! Doubly robust estimation and the exact variance functional on small
//! enumerable processes.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::domain::{start_session, Action, DesignPolicy, History, Observation, StepTriplet, Trajectory};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `σ(H_t, O_t, A_t)`: the history argument carries `O_t` as its pending
/// observation.
pub type ConditionalVarianceSpec = Arc<dyn Fn(&History, Action) -> f64 + Send + Sync>;

/// Outcome mean `μ(O, A)`.
pub type OutcomeMean = Arc<dyn Fn(&Observation, Action) -> f64 + Send + Sync>;

/// Law of the standardized outcome noise `ε` in `Y = μ + σ ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseLaw {
    /// ±1 with equal probability; two-point support keeps enumeration exact.
    Rademacher,
    Gaussian,
}

/// Distribution of the observation process over a finite support, independent
/// of past actions and outcomes.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationKernel {
    Iid(Vec<f64>),
    /// `initial[j]`, `transition[i][j] = P(O_{t+1} = j | O_t = i)`.
    Markov { initial: Vec<f64>, transition: Vec<Vec<f64>> },
}

impl ObservationKernel {
    fn initial(&self) -> &[f64] {
        match self {
            ObservationKernel::Iid(p) => p,
            ObservationKernel::Markov { initial, .. } => initial,
        }
    }

    fn next(&self, current: usize) -> &[f64] {
        match self {
            ObservationKernel::Iid(p) => p,
            ObservationKernel::Markov { transition, .. } => &transition[current],
        }
    }

    fn rows(&self) -> Vec<&[f64]> {
        match self {
            ObservationKernel::Iid(p) => vec![p],
            ObservationKernel::Markov { initial, transition } => {
                std::iter::once(initial.as_slice()).chain(transition.iter().map(Vec::as_slice)).collect()
            }
        }
    }
}

/// A finite-horizon process with finite observation support, outcome mean
/// `μ(O, A)` and history-dependent noise scale `σ(H, O, A)`.
#[derive(Clone)]
pub struct TabularProcess {
    horizon: usize,
    support: Vec<Observation>,
    kernel: ObservationKernel,
    mean: OutcomeMean,
    sigma: ConditionalVarianceSpec,
    noise: NoiseLaw,
}

impl std::fmt::Debug for TabularProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TabularProcess")
            .field("horizon", &self.horizon)
            .field("support", &self.support)
            .field("kernel", &self.kernel)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

/// Path count above which enumeration is refused.
const MAX_PATHS: f64 = 5e7;

impl TabularProcess {
    pub fn new(
        horizon: usize,
        support: Vec<Observation>,
        kernel: ObservationKernel,
        mean: OutcomeMean,
        sigma: ConditionalVarianceSpec,
        noise: NoiseLaw,
    ) -> Result<Self> {
        if horizon == 0 || support.is_empty() {
            return Err(Error::invalid("process needs a positive horizon and nonempty support"));
        }
        for row in kernel.rows() {
            if row.len() != support.len() {
                return Err(Error::DimensionMismatch { expected: support.len(), got: row.len() });
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("observation kernel rows must be probability vectors"));
            }
        }
        if let ObservationKernel::Markov { transition, .. } = &kernel {
            if transition.len() != support.len() {
                return Err(Error::DimensionMismatch { expected: support.len(), got: transition.len() });
            }
        }
        Ok(TabularProcess { horizon, support, kernel, mean, sigma, noise })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn support(&self) -> &[Observation] {
        &self.support
    }

    pub fn mean(&self) -> &OutcomeMean {
        &self.mean
    }

    pub fn sigma(&self) -> &ConditionalVarianceSpec {
        &self.sigma
    }

    fn sigma_at(&self, h: &History, a: Action) -> Result<f64> {
        let s = (self.sigma)(h, a);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::invalid(format!("conditional standard deviation must be positive, got {s}")));
        }
        Ok(s)
    }

    fn contrast(&self, o: usize) -> f64 {
        let obs = &self.support[o];
        (self.mean)(obs, Action::Treatment) - (self.mean)(obs, Action::Control)
    }

    /// `E[S]` and `E[S²]` of `S = Σ_t (μ(O_t,+1) − μ(O_t,−1))` over observation paths.
    fn contrast_moments(&self) -> (f64, f64) {
        fn walk(p: &TabularProcess, t: usize, prev: usize, prob: f64, sum: f64, acc: &mut (f64, f64)) {
            if t == p.horizon {
                acc.0 += prob * sum;
                acc.1 += prob * sum * sum;
                return;
            }
            let row = if t == 0 { p.kernel.initial() } else { p.kernel.next(prev) };
            for (o, &q) in row.iter().enumerate() {
                if q > 0.0 {
                    walk(p, t + 1, o, prob * q, sum + p.contrast(o), acc);
                }
            }
        }
        let mut acc = (0.0, 0.0);
        walk(self, 0, 0, 1.0, 0.0, &mut acc);
        acc
    }

    /// `(1/T) Σ_t E[μ(O_t,+1) − μ(O_t,−1)]`, the target of [`dr_estimate`].
    pub fn true_effect(&self) -> f64 {
        self.contrast_moments().0 / self.horizon as f64
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.noise != NoiseLaw::Rademacher {
            return Err(Error::NotEnumerable("outcome noise has continuous support".into()));
        }
        let paths = (4.0 * self.support.len() as f64).powi(self.horizon as i32);
        if paths > MAX_PATHS {
            return Err(Error::NotEnumerable(format!("{paths:.0} histories exceed the enumeration budget")));
        }
        Ok(())
    }

    fn draw_index(row: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut c = 0.0;
        for (i, &p) in row.iter().enumerate() {
            c += p;
            if u < c {
                return i;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// One trajectory (a single day of `horizon` steps) under `policy`.
    pub fn simulate(&self, policy: &dyn DesignPolicy, rng: &mut Rng) -> Result<Trajectory> {
        let mut session = start_session(policy);
        let mut o = Self::draw_index(self.kernel.initial(), rng);
        let mut h = History::new(self.support[o].clone());
        for t in 0..self.horizon {
            let p = session.allocate(&h)?;
            let a = crate::domain::sample_action(p, rng)?;
            let eps: f64 = match self.noise {
                NoiseLaw::Rademacher => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                NoiseLaw::Gaussian => rng.sample(StandardNormal),
            };
            let y = (self.mean)(h.pending(), a) + self.sigma_at(&h, a)? * eps;
            if t + 1 == self.horizon {
                let pending = h.pending().clone();
                let mut steps = h.into_steps();
                steps.push(StepTriplet::new(pending, a, y)?);
                return Trajectory::new(self.horizon, steps);
            }
            o = Self::draw_index(self.kernel.next(o), rng);
            h.advance(a, y, self.support[o].clone());
        }
        unreachable!("horizon is positive")
    }

    /// Calls `visit(history, probability)` at every reachable decision point
    /// `(H_{t-1}, O_t)` under `policy`, in depth-first order.
    pub fn enumerate_histories(
        &self,
        policy: &dyn DesignPolicy,
        visit: &mut dyn FnMut(&History, f64, f64) -> Result<()>,
    ) -> Result<()> {
        self.check_enumerable()?;
        for (o, &q) in self.kernel.initial().iter().enumerate() {
            if q > 0.0 {
                self.descend(policy, History::new(self.support[o].clone()), o, q, visit)?;
            }
        }
        Ok(())
    }

    fn descend(
        &self,
        policy: &dyn DesignPolicy,
        h: History,
        o: usize,
        prob: f64,
        visit: &mut dyn FnMut(&History, f64, f64) -> Result<()>,
    ) -> Result<()> {
        let p = crate::domain::check_probability(policy.allocate(&h)?, "allocation")?;
        visit(&h, prob, p)?;
        if h.len() + 1 == self.horizon {
            return Ok(());
        }
        for a in Action::BOTH {
            let pa = if a == Action::Treatment { p } else { 1.0 - p };
            if pa == 0.0 {
                continue;
            }
            let mu = (self.mean)(h.pending(), a);
            let s = self.sigma_at(&h, a)?;
            for eps in [-1.0, 1.0] {
                let y = mu + s * eps;
                for (next, &q) in self.kernel.next(o).iter().enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    let mut child = h.clone();
                    child.advance(a, y, self.support[next].clone());
                    self.descend(policy, child, next, prob * pa * 0.5 * q, visit)?;
                }
            }
        }
        Ok(())
    }
}

/// Doubly robust ATE on a logged trajectory with known allocation policy.
///
/// Stateful policies are replayed from the start of the trajectory.
pub fn dr_estimate(traj: &Trajectory, mu: &dyn Fn(&Observation, Action) -> f64, pi: &dyn DesignPolicy) -> Result<f64> {
    let steps = traj.steps();
    let first = steps.first().ok_or(Error::EmptyPanel)?;
    let mut session = start_session(pi);
    let mut h = History::new(first.observation.clone());
    let mut total = 0.0;
    for (t, s) in steps.iter().enumerate() {
        if t > 0 {
            let prev = &steps[t - 1];
            h.advance(prev.action, prev.outcome, s.observation.clone());
        }
        let p = session.allocate(&h)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::DegeneratePropensity { step: t + 1, propensity: p });
        }
        let (m1, m0) = (mu(&s.observation, Action::Treatment), mu(&s.observation, Action::Control));
        total += m1 - m0;
        total += match s.action {
            Action::Treatment => (s.outcome - m1) / p,
            Action::Control => -(s.outcome - m0) / (1.0 - p),
        };
    }
    Ok(total / steps.len() as f64)
}

/// Exact variance of [`dr_estimate`] under `pi`:
///
/// `Var(Σ_t Δμ(O_t))/T² + Σ_t E[σ²(·,+1)/π_t + σ²(·,−1)/(1−π_t)]/T²`.
///
/// Only processes with Rademacher noise and a modest number of histories can
/// be evaluated.
pub fn dr_variance(process: &TabularProcess, pi: &dyn DesignPolicy) -> Result<f64> {
    process.check_enumerable()?;
    let (m1, m2) = process.contrast_moments();
    let mut residual = 0.0;
    let mut step = 0usize;
    process.enumerate_histories(pi, &mut |h, prob, p| {
        step += 1;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::DegeneratePropensity { step: h.time(), propensity: p });
        }
        let s1 = process.sigma_at(h, Action::Treatment)?;
        let s0 = process.sigma_at(h, Action::Control)?;
        residual += prob * (s1 * s1 / p + s0 * s0 / (1.0 - p));
        Ok(())
    })?;
    let t = process.horizon as f64;
    Ok(((m2 - m1 * m1).max(0.0) + residual) / (t * t))
}

/// Variance-minimizing allocation `σ₊ / (σ₊ + σ₋)`.
pub fn neyman_allocation(sigma_plus: f64, sigma_minus: f64) -> Result<f64> {
    if !(sigma_plus > 0.0 && sigma_minus > 0.0) || !sigma_plus.is_finite() || !sigma_minus.is_finite() {
        return Err(Error::invalid(format!(
            "Neyman allocation needs positive finite scales, got ({sigma_plus}, {sigma_minus})"
        )));
    }
    Ok(sigma_plus / (sigma_plus + sigma_minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AllocationSession;
    use crate::rng::Streams;

    struct Constant(f64);

    impl DesignPolicy for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn allocate(&self, _: &History) -> Result<f64> {
            Ok(self.0)
        }
    }

    struct Neyman(ConditionalVarianceSpec);

    impl DesignPolicy for Neyman {
        fn name(&self) -> &str {
            "neyman"
        }
        fn allocate(&self, h: &History) -> Result<f64> {
            neyman_allocation((self.0)(h, Action::Treatment), (self.0)(h, Action::Control))
        }
    }

    fn constant_process(horizon: usize, s1: f64, s0: f64) -> TabularProcess {
        TabularProcess::new(
            horizon,
            vec![Observation::from([0.0, 0.0])],
            ObservationKernel::Iid(vec![1.0]),
            Arc::new(|_, _| 1.0),
            Arc::new(move |_, a| if a == Action::Treatment { s1 } else { s0 }),
            NoiseLaw::Rademacher,
        )
        .unwrap()
    }

    /// Binary observations, σ depending on the current observation and on
    /// the action two steps back.
    fn lagged_process() -> TabularProcess {
        TabularProcess::new(
            3,
            vec![Observation::from([0.0, 0.0]), Observation::from([1.0, 0.0])],
            ObservationKernel::Markov { initial: vec![0.4, 0.6], transition: vec![vec![0.7, 0.3], vec![0.2, 0.8]] },
            Arc::new(|o, a| 0.5 * o.values()[0] + if a == Action::Treatment { 0.3 } else { -0.1 }),
            Arc::new(|h, a| {
                let lag2 = h.len().checked_sub(2).map(|i| h.steps()[i].action);
                let base = 1.0 + 0.5 * h.pending().values()[0];
                match (a, lag2) {
                    (Action::Treatment, Some(Action::Treatment)) => 3.0 * base,
                    (Action::Treatment, _) => base,
                    (Action::Control, _) => 1.5,
                }
            }),
            NoiseLaw::Rademacher,
        )
        .unwrap()
    }

    /// Variance of the estimator by brute force over every
    /// (observation, action, noise) path.
    fn brute_force_variance(process: &TabularProcess, pi: &dyn DesignPolicy) -> f64 {
        let mu = process.mean().clone();
        let mut paths: Vec<(f64, Trajectory)> = Vec::new();
        fn grow(
            p: &TabularProcess,
            pi: &dyn DesignPolicy,
            steps: Vec<StepTriplet>,
            o: usize,
            prob: f64,
            out: &mut Vec<(f64, Trajectory)>,
        ) {
            let h = History::from_parts(steps.clone(), p.support()[o].clone()).unwrap();
            let pa = pi.allocate(&h).unwrap();
            for a in Action::BOTH {
                let q = if a == Action::Treatment { pa } else { 1.0 - pa };
                let m = (p.mean())(h.pending(), a);
                let s = (p.sigma())(&h, a);
                for e in [-1.0, 1.0] {
                    let mut next = steps.clone();
                    next.push(StepTriplet::new(p.support()[o].clone(), a, m + s * e).unwrap());
                    if next.len() == p.horizon() {
                        out.push((prob * q * 0.5, Trajectory::new(p.horizon(), next).unwrap()));
                    } else {
                        for (j, &r) in p.kernel.next(o).iter().enumerate() {
                            grow(p, pi, next.clone(), j, prob * q * 0.5 * r, out);
                        }
                    }
                }
            }
        }
        for (o, &q) in process.kernel.initial().iter().enumerate() {
            grow(process, pi, Vec::new(), o, q, &mut paths);
        }
        let f = |o: &Observation, a: Action| mu(o, a);
        let vals: Vec<(f64, f64)> = paths.iter().map(|(w, t)| (*w, dr_estimate(t, &f, pi).unwrap())).collect();
        let mean: f64 = vals.iter().map(|(w, v)| w * v).sum();
        vals.iter().map(|(w, v)| w * (v - mean).powi(2)).sum()
    }

    #[test]
    fn variance_identities() {
        assert_eq!(dr_variance(&constant_process(4, 1.0, 1.0), &Constant(0.5)).unwrap(), 1.0);
        let p = constant_process(1, 2.0, 1.0);
        let opt = neyman_allocation(2.0, 1.0).unwrap();
        assert!((dr_variance(&p, &Constant(opt)).unwrap() - 9.0).abs() < 1e-12);
        assert!((dr_variance(&p, &Constant(0.5)).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_brute_force() {
        let p = lagged_process();
        for pi in [&Constant(0.5) as &dyn DesignPolicy, &Constant(0.3), &Neyman(p.sigma().clone())] {
            let exact = dr_variance(&p, pi).unwrap();
            let brute = brute_force_variance(&p, pi);
            assert!((exact - brute).abs() < 1e-10, "{exact} vs {brute}");
        }
    }

    #[test]
    fn gaussian_noise_is_not_enumerable() {
        let mut p = constant_process(2, 1.0, 1.0);
        p.noise = NoiseLaw::Gaussian;
        assert!(matches!(dr_variance(&p, &Constant(0.5)), Err(Error::NotEnumerable(_))));
    }

    #[test]
    fn estimate_examples() {
        let t = Trajectory::new(1, vec![StepTriplet::new(Observation::from([0.0, 0.0]), Action::Treatment, 1.0).unwrap()])
            .unwrap();
        assert_eq!(dr_estimate(&t, &|_, _| 0.0, &Constant(0.5)).unwrap(), 2.0);
        assert!(matches!(dr_estimate(&t, &|_, _| 0.0, &Constant(1.0)), Err(Error::DegeneratePropensity { step: 1, .. })));

        // Outcomes equal to the mean: only the contrast survives.
        let mu = |o: &Observation, a: Action| o.values()[0] * 2.0 + a.sign() * 0.7;
        let steps: Vec<_> = (0..5)
            .map(|i| {
                let o = Observation::from([i as f64, 1.0]);
                let a = Action::from_index(i % 2);
                let y = mu(&o, a);
                StepTriplet::new(o, a, y).unwrap()
            })
            .collect();
        let traj = Trajectory::new(5, steps).unwrap();
        for p in [0.2, 0.5, 0.9] {
            assert!((dr_estimate(&traj, &mu, &Constant(p)).unwrap() - 1.4).abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_matches_direct_sum() {
        let mut rng = Streams::new(11).rng("dr", 0);
        let steps: Vec<_> = (0..7)
            .map(|_| {
                let o = Observation::from([rng.random::<f64>(), rng.random::<f64>()]);
                let a = if rng.random::<bool>() { Action::Treatment } else { Action::Control };
                StepTriplet::new(o, a, rng.random::<f64>() * 3.0).unwrap()
            })
            .collect();
        let traj = Trajectory::new(7, steps.clone()).unwrap();
        let mu = |o: &Observation, a: Action| o.values()[0] - 0.5 * o.values()[1] + 0.25 * a.sign();
        let p = 0.35;
        let mut direct = 0.0;
        for s in &steps {
            let (a, b) = (mu(&s.observation, Action::Treatment), mu(&s.observation, Action::Control));
            direct += a - b;
            if s.action == Action::Treatment {
                direct += (s.outcome - a) / p;
            } else {
                direct -= (s.outcome - b) / (1.0 - p);
            }
        }
        direct /= 7.0;
        assert!((dr_estimate(&traj, &mu, &Constant(p)).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn neyman_examples_and_errors() {
        assert_eq!(neyman_allocation(1.0, 1.0).unwrap(), 0.5);
        assert!((neyman_allocation(2.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(neyman_allocation(1.0, 3.0).unwrap(), 0.25);
        assert!(neyman_allocation(0.0, 1.0).is_err());
        assert!(neyman_allocation(1.0, -2.0).is_err());
    }

    #[test]
    fn simulate_respects_policy_session() {
        struct Counting;
        struct Session(usize);
        impl AllocationSession for Session {
            fn allocate(&mut self, _: &History) -> Result<f64> {
                self.0 += 1;
                Ok(if self.0 % 2 == 1 { 1.0 } else { 0.0 })
            }
        }
        impl DesignPolicy for Counting {
            fn name(&self) -> &str {
                "counting"
            }
            fn allocate(&self, h: &History) -> Result<f64> {
                Ok(if h.len() % 2 == 0 { 1.0 } else { 0.0 })
            }
            fn session(&self) -> Option<Box<dyn AllocationSession + '_>> {
                Some(Box::new(Session(0)))
            }
        }
        let p = lagged_process();
        let traj = p.simulate(&Counting, &mut Streams::new(1).rng("sim", 0)).unwrap();
        let actions: Vec<_> = traj.steps().iter().map(|s| s.action).collect();
        assert_eq!(actions, vec![Action::Treatment, Action::Control, Action::Treatment]);
    }
}
