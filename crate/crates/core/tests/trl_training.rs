use tsdesign::rng::Streams;
use tsdesign::sim::{make_setting, true_ate, LinearEnv, Setting};
use tsdesign::trl::{train, ProxyMseReward, TrlConfig};

fn small_config(epochs: usize) -> TrlConfig {
    TrlConfig { d_model: 16, n_heads: 2, n_layers: 1, epochs, reward_scale: 300.0, ..TrlConfig::default() }
}

fn setting_i() -> (LinearEnv, f64) {
    let env = LinearEnv::new(make_setting(Setting::I, 4).unwrap()).unwrap();
    let truth = true_ate(env.config());
    (env, truth)
}

#[test]
fn fixed_seed_gives_identical_log() {
    let (env, truth) = setting_i();
    let cfg = small_config(8);
    let reward = ProxyMseReward::daily_ols(Some(truth), &cfg).unwrap();
    let run = || train(&env, &reward, 10, &cfg, &Streams::new(5)).unwrap();
    let (a, b) = (run(), run());
    let bits = |agent: &tsdesign::trl::TrainedAgent| {
        agent.log.iter().map(|r| (r.epoch, r.mean_return.to_bits(), r.loss.to_bits(), r.lr.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    let other = train(&env, &reward, 10, &cfg, &Streams::new(6)).unwrap();
    assert_ne!(bits(&a), bits(&other));
}

#[test]
fn loss_trends_down_on_setting_i() {
    let (env, truth) = setting_i();
    let cfg = small_config(400);
    let reward = ProxyMseReward::daily_ols(Some(truth), &cfg).unwrap();
    let agent = train(&env, &reward, 30, &cfg, &Streams::new(1)).unwrap();
    let blocks: Vec<f64> = agent.log.chunks(50).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64).collect();
    // least-squares slope of the 50-epoch block means
    let n = blocks.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = blocks.iter().sum::<f64>() / n;
    let slope: f64 = blocks.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum::<f64>()
        / blocks.iter().enumerate().map(|(i, _)| (i as f64 - xm).powi(2)).sum::<f64>();
    assert!(slope <= 0.0, "block means {blocks:?}");
    assert!(blocks.last().unwrap() <= blocks.first().unwrap(), "block means {blocks:?}");
}

#[test]
fn missing_truth_is_an_error() {
    assert!(ProxyMseReward::daily_ols(None, &TrlConfig::default()).is_err());
}
