//! Exact variance of the doubly robust estimator on a small process where
//! the treated arm's noise depends on the action two steps back. The oracle
//! Neyman policy uses the full history; constant and observation-only
//! allocations cannot match it.
//!
//! cargo run --release --example neyman_oracle

use std::sync::Arc;

use tsdesign::designs::{neyman_oracle_policy, Bernoulli};
use tsdesign::estimators::{dr_estimate, dr_variance, ConditionalVarianceSpec, NoiseLaw, ObservationKernel, TabularProcess};
use tsdesign::rng::Streams;
use tsdesign::{Action, History, Observation};

fn main() -> tsdesign::Result<()> {
    let sigma: ConditionalVarianceSpec = Arc::new(|h: &History, a: Action| {
        let lag2 = h.len().checked_sub(2).map(|i| h.steps()[i].action);
        match (a, lag2) {
            (Action::Treatment, Some(Action::Treatment)) => 3.0,
            (Action::Treatment, _) => 1.0,
            (Action::Control, _) => 1.5,
        }
    });
    let mu = |o: &Observation, a: Action| o.values()[0] + 0.4 * a.sign();
    let process = TabularProcess::new(
        4,
        vec![Observation::from([0.0, 0.0]), Observation::from([1.0, 0.0])],
        ObservationKernel::Markov { initial: vec![0.5, 0.5], transition: vec![vec![0.8, 0.2], vec![0.3, 0.7]] },
        Arc::new(mu),
        sigma.clone(),
        NoiseLaw::Rademacher,
    )?;
    let oracle = neyman_oracle_policy(sigma);
    println!("true effect {:.3}", process.true_effect());
    println!("Var[DR] under the oracle:   {:.5}", dr_variance(&process, &oracle)?);
    let best = (1..100)
        .map(|k| (k as f64 / 100.0, dr_variance(&process, &Bernoulli(k as f64 / 100.0)).unwrap()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    println!("best constant (p = {:.2}):  {:.5}", best.0, best.1);

    let mut rng = Streams::new(3).rng("dr", 0);
    let reps = 20_000;
    let mut est = Vec::with_capacity(reps);
    for _ in 0..reps {
        let traj = process.simulate(&oracle, &mut rng)?;
        est.push(dr_estimate(&traj, &mu, &oracle)?);
    }
    let (mean, sd) = tsdesign::estimators::mean_sd(&est);
    println!("simulated: mean {mean:.4}, variance {:.5}", sd * sd);
    Ok(())
}
