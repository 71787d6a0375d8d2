//! Compares the classical designs on a linear carryover setting.
//!
//! cargo run --release --example linear_benchmark -- [setting] [reps]

use tsdesign::bench::{run_grid, summarize, PreparedDesign};
use tsdesign::designs::{paired_estimator, DesignSpec, EnvKind};
use tsdesign::estimators::{ate_monte_carlo, LstdConfig};
use tsdesign::rng::Streams;
use tsdesign::sim::{make_setting, true_ate, LinearEnv, Setting};

fn main() -> tsdesign::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let setting: Setting = args.get(1).map_or("i", String::as_str).parse()?;
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);

    let config = make_setting(setting, 4)?;
    let env = LinearEnv::new(config.clone())?;
    let streams = Streams::new(2024);
    let mc = ate_monte_carlo(&env, 20_000, &streams.child("truth", 0))?;
    println!("setting ({}): plug-in ATE {:.5}, Monte Carlo {:.5} ± {:.5}", setting.id(), true_ate(&config), mc.value, mc.se);

    let specs = [
        DesignSpec::Tmdp,
        DesignSpec::Nmdp,
        DesignSpec::Wsy { period: 4 },
        DesignSpec::Hw { p_switch: 0.25, burn_in: 1 },
        DesignSpec::Bsz { p_switch: 0.25, window: 1 },
        DesignSpec::Xct { p_switch: 0.5 },
    ];
    let designs: Vec<PreparedDesign> = specs
        .into_iter()
        .map(|spec| {
            let estimator = paired_estimator(&spec, EnvKind::Linear);
            Ok(PreparedDesign { id: spec.id(), policy: spec.baseline_policy(4)?, spec, estimator })
        })
        .collect::<tsdesign::Result<_>>()?;
    let results = run_grid(&env, &designs, 30, reps, mc.value, &LstdConfig::default(), &streams);
    println!("{:<28} {:>10} {:>10}  estimator", "design", "MSE", "±95%");
    for s in summarize(&results, &env_label(setting), mc.value, 2024)? {
        println!("{:<28} {:>10.6} {:>10.6}  {}", s.design, s.mse_mean, s.ci_half_width, s.estimator);
    }
    Ok(())
}

fn env_label(s: Setting) -> String {
    format!("linear-{}", s.id())
}
