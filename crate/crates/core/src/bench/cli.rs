//! Command-line front end; the binary only forwards `argv` here.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::designs::{DesignSpec, EnvKind};
use crate::env::run_experiment;
use crate::error::{Error, Result};
use crate::estimators::ate_monte_carlo;
use crate::trl::{train, write_training_log, ProxyMseReward};

use super::config::{BenchmarkConfig, BuiltEnv};
use super::output::{
    load_truth, read_results_csv, sha256_file, write_manifest, write_results_csv, write_summary_csv,
    write_summary_json, write_trajectories_csv, Manifest, OutputFile, TruthCache, CI_METHOD,
};
use super::run::{grid_search_baseline, prepare_designs, run_grid, summarize, GridChoice, MseSummary};

#[derive(Parser, Debug)]
#[command(name = "tsdesign", version, about = "Time-series A/B design benchmarks")]
struct Cli {
    /// Benchmark config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the number of replications.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute and cache the Monte Carlo ATE.
    McTruth,
    /// Write trajectories generated under the configured designs.
    Simulate {
        /// Only designs whose id or family matches.
        #[arg(long)]
        design: Vec<String>,
    },
    /// Train the transformer policy.
    Train,
    /// Run every design on every replication and summarize.
    Benchmark,
    /// Rebuild the summary files from an existing results CSV.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::McTruth => "mc-truth",
            Command::Simulate { .. } => "simulate",
            Command::Train => "train",
            Command::Benchmark => "benchmark",
            Command::Report => "report",
        }
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 on
/// usage or config errors, 1 on runtime errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Unknown(_) => 2,
                _ => 1,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<BenchmarkConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = BenchmarkConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.reps {
        cfg.replications = r;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Run {
    cfg: BenchmarkConfig,
    command: &'static str,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn truth_path(&self) -> PathBuf {
        self.out("truth.json")
    }

    fn truth_checksum(&self) -> Result<String> {
        let env_json = serde_json::to_string(&self.cfg.environment)?;
        Ok(TruthCache::checksum_for(&env_json, self.cfg.seed, self.cfg.truth.rollouts))
    }

    fn compute_truth(&mut self, env: &BuiltEnv) -> Result<TruthCache> {
        let mc = ate_monte_carlo(env.sim.as_ref(), self.cfg.truth.rollouts, &self.cfg.streams().child("truth", 0))?;
        let cache = TruthCache {
            checksum: self.truth_checksum()?,
            env: self.cfg.environment.label(),
            seed: self.cfg.seed,
            rollouts: mc.n_rollouts,
            value: mc.value,
            se: mc.se,
        };
        cache.save(&self.truth_path())?;
        self.outputs.push(self.truth_path());
        Ok(cache)
    }

    fn cached_truth(&self) -> Result<Option<TruthCache>> {
        load_truth(&self.truth_path(), &self.truth_checksum()?)
    }

    fn resolve(&self, spec: &DesignSpec) -> DesignSpec {
        match spec {
            DesignSpec::Trl { checkpoint } if Path::new(checkpoint).is_relative() => {
                DesignSpec::Trl { checkpoint: self.out(checkpoint).to_string_lossy().into_owned() }
            }
            other => other.clone(),
        }
    }

    fn manifest(&self, truth: Option<TruthCache>, grid: Vec<GridChoice>, failures: usize) -> Result<()> {
        let config = serde_json::to_value(&self.cfg)?;
        let config_sha256 = super::output::sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let mut outputs = Vec::new();
        for p in &self.outputs {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            outputs.push(OutputFile { path: name, sha256: sha256_file(p)? });
        }
        let created = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok());
        let m = Manifest {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            config,
            config_sha256,
            seed: self.cfg.seed,
            replications: self.cfg.replications,
            env: self.cfg.environment.label(),
            truth,
            ci_method: CI_METHOD.into(),
            grid_search: grid,
            failures,
            outputs,
            created,
        };
        write_manifest(&m, &self.out(&format!("manifest_{}.json", self.command.replace('-', "_"))))
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut run = Run { cfg, command: cli.command.name(), outputs: Vec::new() };
    match &cli.command {
        Command::McTruth => mc_truth(&mut run),
        Command::Simulate { design } => simulate(&mut run, design),
        Command::Train => train_cmd(&mut run),
        Command::Benchmark => benchmark(&mut run),
        Command::Report => report(&mut run),
    }
}

fn mc_truth(run: &mut Run) -> Result<()> {
    let env = run.cfg.environment.build(&run.cfg.env_streams())?;
    let truth = run.compute_truth(&env)?;
    println!("ATE_mc = {} (se {}, {} rollouts)", truth.value, truth.se, truth.rollouts);
    run.manifest(Some(truth), Vec::new(), 0)
}

fn simulate(run: &mut Run, filter: &[String]) -> Result<()> {
    let env = run.cfg.environment.build(&run.cfg.env_streams())?;
    let specs: Vec<DesignSpec> = run
        .cfg
        .designs
        .iter()
        .filter(|d| filter.is_empty() || filter.iter().any(|f| *f == d.id() || f == d.family()))
        .map(|d| run.resolve(d))
        .collect();
    if specs.is_empty() {
        return Err(Error::Config("no designs selected".into()));
    }
    let designs = prepare_designs(&specs, env.sim.as_ref(), env.kind, &run.cfg)?;
    let streams = run.cfg.streams();
    let mut rows = Vec::new();
    for d in &designs {
        for r in 0..run.cfg.replications {
            let traj = run_experiment(env.sim.as_ref(), run.cfg.n_days, d.policy.as_ref(), &streams.child("replication", r as u64))?;
            rows.push((r, d.id.clone(), traj));
        }
    }
    let path = run.out("trajectories.csv");
    write_trajectories_csv(&rows, &path)?;
    run.outputs.push(path);
    run.manifest(None, Vec::new(), 0)
}

fn train_cmd(run: &mut Run) -> Result<()> {
    let env = run.cfg.environment.build(&run.cfg.env_streams())?;
    let truth = run.cached_truth()?;
    let ate = truth.as_ref().map(|t| t.value);
    let reward = match env.kind {
        EnvKind::Dispatch => ProxyMseReward::lstd(ate, &run.cfg.trl, run.cfg.lstd)?,
        _ => ProxyMseReward::daily_ols(ate, &run.cfg.trl)?,
    };
    let n_days = run.cfg.training.n_days.unwrap_or(run.cfg.n_days);
    let streams = run.cfg.streams().child("trl-training", run.cfg.training.seed);
    let agent = train(env.sim.as_ref(), &reward, n_days, &run.cfg.trl, &streams)?;
    let ck = run.out(&run.cfg.training.checkpoint);
    agent.policy.save(&ck)?;
    let log = run.out(&run.cfg.training.log);
    write_training_log(&agent.log, &log)?;
    run.outputs.extend([ck, log]);
    if let Some(last) = agent.log.last() {
        println!("trained {} epochs; final return {} loss {}", agent.log.len(), last.mean_return, last.loss);
    }
    run.manifest(truth, Vec::new(), 0)
}

fn print_summary(rows: &[MseSummary]) {
    println!("{:<32} {:>12} {:>12} {:>6}", "design", "mse", "ci_half", "reps");
    for s in rows {
        println!("{:<32} {:>12.6} {:>12.6} {:>6}", s.design, s.mse_mean, s.ci_half_width, s.reps);
    }
}

fn summarize_available(results: &[super::run::ReplicationResult], run: &Run, truth: f64) -> Result<Vec<MseSummary>> {
    let mut ok = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in results {
        if seen.contains(&r.design.as_str()) {
            continue;
        }
        seen.push(&r.design);
        let rows: Vec<_> = results.iter().filter(|x| x.design == r.design).cloned().collect();
        match summarize(&rows, &run.cfg.environment.label(), truth, run.cfg.seed) {
            Ok(mut s) => ok.append(&mut s),
            Err(e) => log::warn!("{e}"),
        }
    }
    Ok(ok)
}

fn benchmark(run: &mut Run) -> Result<()> {
    let env = run.cfg.environment.build(&run.cfg.env_streams())?;
    let truth = match run.cached_truth()? {
        Some(t) => t,
        None => run.compute_truth(&env)?,
    };
    let mut specs: Vec<DesignSpec> = run.cfg.designs.iter().map(|d| run.resolve(d)).collect();
    let mut choices = Vec::new();
    if let Some(grid) = run.cfg.grid_search.clone() {
        for family in &grid.families {
            let c = grid_search_baseline(env.sim.as_ref(), env.kind, family, &run.cfg, &grid, truth.value, &run.cfg.streams())?;
            if !specs.contains(&c.best) {
                specs.push(c.best.clone());
            }
            choices.push(c);
        }
    }
    if specs.is_empty() {
        return Err(Error::Config("no designs to benchmark".into()));
    }
    let designs = prepare_designs(&specs, env.sim.as_ref(), env.kind, &run.cfg)?;
    let results = run_grid(
        env.sim.as_ref(),
        &designs,
        run.cfg.n_days,
        run.cfg.replications,
        truth.value,
        &run.cfg.lstd,
        &run.cfg.streams(),
    );
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    let summary = summarize_available(&results, run, truth.value)?;
    let (res_path, sum_path, json_path) = (run.out("results.csv"), run.out("summary.csv"), run.out("summary.json"));
    write_results_csv(&results, &res_path)?;
    write_summary_csv(&summary, &sum_path)?;
    write_summary_json(&summary, &json_path)?;
    run.outputs.extend([res_path, sum_path, json_path]);
    print_summary(&summary);
    run.manifest(Some(truth), choices, failures)
}

fn report(run: &mut Run) -> Result<()> {
    let res_path = run.out("results.csv");
    if !res_path.exists() {
        return Err(Error::Config(format!("{} not found; run benchmark first", res_path.display())));
    }
    let results = read_results_csv(&res_path)?;
    let truth = run.cached_truth()?.ok_or_else(|| Error::Config("no matching truth.json; run mc-truth".into()))?;
    let summary = summarize_available(&results, run, truth.value)?;
    let (sum_path, json_path) = (run.out("summary.csv"), run.out("summary.json"));
    write_summary_csv(&summary, &sum_path)?;
    write_summary_json(&summary, &json_path)?;
    run.outputs.extend([sum_path, json_path]);
    print_summary(&summary);
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    run.manifest(Some(truth), Vec::new(), failures)
}
