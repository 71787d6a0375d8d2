//! Trains the transformer allocation policy on a linear carryover setting,
//! saves a checkpoint and compares it with daily alternation.
//!
//! cargo run --release --example trl_training -- [epochs]

use tsdesign::designs::DesignSpec;
use tsdesign::env::run_experiment;
use tsdesign::estimators::daily_ols_ate;
use tsdesign::rng::Streams;
use tsdesign::sim::{make_setting, true_ate, LinearEnv, Setting};
use tsdesign::trl::{train, write_training_log, ProxyMseReward, TrlConfig, TrlPolicy};
use tsdesign::DesignPolicy;

fn mse(env: &LinearEnv, policy: &dyn DesignPolicy, truth: f64, streams: &Streams) -> tsdesign::Result<f64> {
    let mut total = 0.0;
    for r in 0..100 {
        let traj = run_experiment(env, 30, policy, &streams.child("replication", r))?;
        total += (daily_ols_ate(&traj)?.value - truth).powi(2);
    }
    Ok(total / 100.0)
}

fn main() -> tsdesign::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let config = make_setting(Setting::I, 4)?;
    let truth = true_ate(&config);
    let env = LinearEnv::new(config)?;
    let trl = TrlConfig {
        d_model: 32,
        n_layers: 1,
        learning_rate: 1e-3,
        epochs,
        reward_scale: 300.0,
        ..TrlConfig::default()
    };
    let reward = ProxyMseReward::daily_ols(Some(truth), &trl)?;

    let streams = Streams::new(1);
    let agent = train(&env, &reward, 30, &trl, &streams.child("trl-training", 0))?;
    let dir = std::env::temp_dir();
    agent.policy.save(&dir.join("trl_checkpoint.json"))?;
    write_training_log(&agent.log, &dir.join("trl_training_log.csv"))?;
    let reloaded = TrlPolicy::load(&dir.join("trl_checkpoint.json"))?;
    println!("checkpoint and log written to {}", dir.display());

    let eval = streams.child("evaluation", 0);
    println!("TRL  MSE {:.6}", mse(&env, &reloaded, truth, &eval)?);
    for spec in [DesignSpec::Tmdp, DesignSpec::Nmdp] {
        println!("{:<4} MSE {:.6}", spec.id(), mse(&env, spec.baseline_policy(4)?.as_ref(), truth, &eval)?);
    }
    let traj = run_experiment(&env, 30, &reloaded, &eval.child("replication", 0))?;
    let pattern: String = traj.steps().iter().map(|s| if s.action.sign() > 0.0 { '+' } else { '-' }).collect();
    println!("one TRL allocation, one character per interval:\n{pattern}");
    Ok(())
}
