//! Runs the order-dispatch grid world under each matching rule, then
//! estimates the effect of switching rules from a switchback experiment
//! with LSTD.
//!
//! cargo run --release --example dispatch_world

use tsdesign::designs::DesignSpec;
use tsdesign::env::{run_experiment, Simulator};
use tsdesign::estimators::{affine_features, ate_monte_carlo, lstd_estimate, LstdConfig};
use tsdesign::rng::Streams;
use tsdesign::sim::dispatch::write_trace;
use tsdesign::sim::{DispatchEnv, GridConfig};
use tsdesign::Action;

fn main() -> tsdesign::Result<()> {
    let streams = Streams::new(11);
    let env = DispatchEnv::new(GridConfig::default(), &streams.child("dispatch-value", 0))?;

    for action in Action::BOTH {
        let mut revenue = 0.0;
        let mut matched = 0;
        for day in 0..100 {
            let mut world = env.world(streams.env_day(day));
            while !world.is_done() {
                revenue += world.step(action)?;
            }
            matched += world.orders().iter().filter(|o| o.matched_at.is_some()).count();
            if day == 0 {
                let path = std::env::temp_dir().join(format!("dispatch_trace_{:+}.csv", action.sign()));
                write_trace(&path, world.trace())?;
                println!("first-day trace written to {}", path.display());
            }
        }
        let rule = if action == Action::Treatment { "value-based" } else { "nearest-driver" };
        println!("{rule:>14}: revenue/day {:.2}, orders served/day {:.1}", revenue / 100.0, matched as f64 / 100.0);
    }

    let truth = ate_monte_carlo(&env, 500, &streams.child("truth", 0))?;
    println!("per-step ATE (Monte Carlo): {:.4} ± {:.4}", truth.value, truth.se);
    let design = DesignSpec::Wsy { period: 5 }.baseline_policy(env.intervals_per_day())?;
    let mut sq = 0.0;
    for r in 0..20 {
        let traj = run_experiment(&env, 14, design.as_ref(), &streams.child("replication", r))?;
        let est = lstd_estimate(&traj, &affine_features, &LstdConfig::default())?;
        sq += (est.value - truth.value).powi(2);
    }
    println!("WSY(period=5) + LSTD over 14 days: MSE {:.5}", sq / 20.0);
    Ok(())
}
