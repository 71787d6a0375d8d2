use crate::domain::{Action, Trajectory};
use crate::error::{Error, Result};

/// Horvitz–Thompson estimator for a Markov switchback with flip probability
/// `p_switch`, counting step `t` toward an arm only when the last `k`
/// within-day actions and `A_t` all equal that arm.
///
/// Carryover does not cross day boundaries, so early intervals use a shorter
/// window. Under the switchback law such a run has probability
/// `0.5 (1 − p)^w` for window length `w`.
pub fn horvitz_thompson(traj: &Trajectory, p_switch: f64, k: usize) -> Result<f64> {
    if !(p_switch > 0.0 && p_switch < 1.0) {
        return Err(Error::invalid(format!("switch probability {p_switch} must lie in (0, 1)")));
    }
    let steps = traj.steps();
    if steps.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let mm = traj.intervals_per_day();
    let mut total = 0.0;
    for (t, s) in steps.iter().enumerate() {
        let w = k.min(t % mm);
        if steps[t - w..t].iter().all(|p| p.action == s.action) {
            let prob = 0.5 * (1.0 - p_switch).powi(w as i32);
            total += s.action.sign() * s.outcome / prob;
        }
    }
    Ok(total / steps.len() as f64)
}

/// Difference in means after discarding the first `burn_in` steps and the
/// `burn_in` steps following every switch.
pub fn burn_in_difference(traj: &Trajectory, burn_in: usize) -> Result<f64> {
    let steps = traj.steps();
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for t in burn_in..steps.len() {
        let a = steps[t].action;
        if steps[t - burn_in..t].iter().all(|p| p.action == a) {
            sums[a.index()] += steps[t].outcome;
            counts[a.index()] += 1;
        }
    }
    if counts.contains(&0) {
        return Err(Error::invalid(format!("burn-in {burn_in} leaves an arm without observations")));
    }
    let mean = |a: Action| sums[a.index()] / counts[a.index()] as f64;
    Ok(mean(Action::Treatment) - mean(Action::Control))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Observation, StepTriplet};

    fn traj(actions: &[i64], outcomes: &[f64], m: usize) -> Trajectory {
        let steps = actions
            .iter()
            .zip(outcomes)
            .map(|(&a, &y)| StepTriplet::new(Observation::from([0.0, 0.0]), Action::from_sign(a).unwrap(), y).unwrap())
            .collect();
        Trajectory::new(m, steps).unwrap()
    }

    #[test]
    fn burn_in_drops_post_switch_steps() {
        let t = traj(&[1, 1, 1, -1, -1, -1], &[9.0, 2.0, 2.0, 7.0, 1.0, 1.0], 6);
        assert_eq!(burn_in_difference(&t, 0).unwrap(), 13.0 / 3.0 - 3.0);
        assert_eq!(burn_in_difference(&t, 1).unwrap(), 1.0);
        assert!(burn_in_difference(&t, 3).is_err());
    }

    #[test]
    fn horvitz_thompson_weights() {
        // k = 1, p = 0.5: run weight 0.25 except day starts (0.5).
        let t = traj(&[1, 1, -1, -1], &[1.0, 2.0, 3.0, 4.0], 2);
        let expected = (1.0 / 0.5 + 2.0 / 0.25 - 3.0 / 0.5 - 4.0 / 0.25) / 4.0;
        assert!((horvitz_thompson(&t, 0.5, 1).unwrap() - expected).abs() < 1e-12);
        // k = 0 reduces to the plain inverse-propensity contrast.
        let plain = (1.0 + 2.0 - 3.0 - 4.0) / 0.5 / 4.0;
        assert!((horvitz_thompson(&t, 0.5, 0).unwrap() - plain).abs() < 1e-12);
    }
}
