use std::path::Path;
use std::process::{Command, Output};

fn tsdesign(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsdesign"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

const LINEAR: &str = r#"
n_days = 6
replications = 3
seed = 2

[environment]
kind = "linear"
setting = "iii"

[[designs]]
kind = "tmdp"

[[designs]]
kind = "wsy"
period = 3

[truth]
rollouts = 100
"#;

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "replicatons = 3\n[environment]\nkind = \"linear\"\nsetting = \"i\"\n").unwrap();
    assert_eq!(tsdesign(&bad, &out, &["benchmark"]).status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[environment]\nkind = \"linear\"\nsetting = \"vii\"\n").unwrap();
    assert_eq!(tsdesign(&unknown, &out, &["mc-truth"]).status.code(), Some(2));

    let no_config = Command::new(env!("CARGO_BIN_EXE_tsdesign")).arg("benchmark").output().unwrap();
    assert_eq!(no_config.status.code(), Some(2));

    let missing_ckpt = dir.path().join("trl.toml");
    std::fs::write(
        &missing_ckpt,
        format!("{LINEAR}\n[[designs]]\nkind = \"trl\"\ncheckpoint = \"nowhere.json\"\n"),
    )
    .unwrap();
    assert_eq!(tsdesign(&missing_ckpt, &out, &["benchmark"]).status.code(), Some(1));
}

#[test]
fn benchmark_writes_the_plot_interfaces() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("linear.toml");
    std::fs::write(&config, LINEAR).unwrap();
    let out = dir.path().join("out");
    let run = tsdesign(&config, &out, &["--reps", "4", "benchmark"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), "design,mse_mean,ci_half_width,reps,env,estimator,truth,seed");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("TMDP,") && rows[0].contains(",4,linear-iii,ols-plugin,"));

    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest_benchmark.json")).unwrap()).unwrap();
    assert_eq!(manifest["replications"], 4);
    assert_eq!(manifest["seed"], 2);
    let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"summary.csv") && listed.contains(&"results.csv"));

    // report rebuilds the same summary from results.csv
    let before = std::fs::read(out.join("summary.csv")).unwrap();
    std::fs::remove_file(out.join("summary.csv")).unwrap();
    assert!(tsdesign(&config, &out, &["--reps", "4", "report"]).status.success());
    assert_eq!(std::fs::read(out.join("summary.csv")).unwrap(), before);
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("linear.toml");
    std::fs::write(&config, LINEAR).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tsdesign(&config, &a, &["simulate"]).status.success());
    assert!(tsdesign(&config, &b, &["--seed", "99", "simulate"]).status.success());
    assert_ne!(std::fs::read(a.join("trajectories.csv")).unwrap(), std::fs::read(b.join("trajectories.csv")).unwrap());
}
