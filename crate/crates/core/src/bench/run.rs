use serde::{Deserialize, Serialize};

use crate::designs::{paired_estimator, DesignSpec, EnvKind, EstimatorId};
use crate::domain::{DesignPolicy, Trajectory};
use crate::env::{run_experiment, Simulator};
use crate::error::{Error, Result};
use crate::estimators::{
    affine_features, burn_in_difference, daily_ols_ate, horvitz_thompson, lstd_estimate, mean_sd, LstdConfig,
};
use crate::rng::Streams;
use crate::trl::TrlPolicy;

use super::config::{BenchmarkConfig, GridSearchConfig};

/// Applies an estimator to one trajectory.
pub fn estimate(id: &EstimatorId, traj: &Trajectory, truth: f64, lstd: &LstdConfig) -> Result<f64> {
    match *id {
        EstimatorId::OlsPlugin => Ok(daily_ols_ate(traj)?.value),
        EstimatorId::Lstd => Ok(lstd_estimate(traj, &affine_features, lstd)?.value),
        EstimatorId::HorvitzThompson { p_switch, window } => horvitz_thompson(traj, p_switch, window),
        EstimatorId::BurnIn { burn_in } => burn_in_difference(traj, burn_in),
        EstimatorId::Oracle => Ok(truth),
    }
}

/// A design with its policy and estimator resolved.
pub struct PreparedDesign {
    pub id: String,
    pub spec: DesignSpec,
    pub policy: Box<dyn DesignPolicy>,
    pub estimator: EstimatorId,
}

impl PreparedDesign {
    pub fn new(spec: DesignSpec, env: &dyn Simulator, kind: EnvKind, config: &BenchmarkConfig) -> Result<Self> {
        let policy: Box<dyn DesignPolicy> = match &spec {
            DesignSpec::Trl { checkpoint } => {
                let p = TrlPolicy::load(std::path::Path::new(checkpoint))?;
                if p.encoder().obs_dim() != env.obs_dim() || p.encoder().intervals_per_day != env.intervals_per_day() {
                    return Err(Error::Config(format!("checkpoint {checkpoint} was trained on a different environment")));
                }
                Box::new(p)
            }
            other => other.baseline_policy(env.intervals_per_day())?,
        };
        let estimator = config
            .estimator_overrides
            .get(spec.family())
            .cloned()
            .unwrap_or_else(|| paired_estimator(&spec, kind));
        Ok(PreparedDesign { id: spec.id(), spec, policy, estimator })
    }
}

/// Policies for every configured design, in file order.
pub fn prepare_designs(
    specs: &[DesignSpec],
    env: &dyn Simulator,
    kind: EnvKind,
    config: &BenchmarkConfig,
) -> Result<Vec<PreparedDesign>> {
    specs.iter().map(|s| PreparedDesign::new(s.clone(), env, kind, config)).collect()
}

/// One design on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub design: String,
    pub estimator: String,
    pub replication: usize,
    pub estimate: Option<f64>,
    pub sq_error: Option<f64>,
    pub error: Option<String>,
}

/// Every design on `reps` replications. Replication `r` uses the stream
/// tree `streams.child("replication", r)` for every design, so designs
/// differ only through their allocations. Failures are recorded, not fatal.
/// Rows are ordered by (design, replication).
pub fn run_grid(
    env: &dyn Simulator,
    designs: &[PreparedDesign],
    n_days: usize,
    reps: usize,
    truth: f64,
    lstd: &LstdConfig,
    streams: &Streams,
) -> Vec<ReplicationResult> {
    let mut out = Vec::with_capacity(designs.len() * reps);
    for d in designs {
        for r in 0..reps {
            let rep_streams = streams.child("replication", r as u64);
            let res = run_experiment(env, n_days, d.policy.as_ref(), &rep_streams)
                .and_then(|traj| estimate(&d.estimator, &traj, truth, lstd));
            let (estimate, sq_error, error) = match res {
                Ok(v) if v.is_finite() => (Some(v), Some((v - truth).powi(2)), None),
                Ok(v) => (None, None, Some(format!("non-finite estimate {v}"))),
                Err(e) => (None, None, Some(e.to_string())),
            };
            if let Some(e) = &error {
                log::warn!("{} replication {r}: {e}", d.id);
            }
            out.push(ReplicationResult {
                design: d.id.clone(),
                estimator: d.estimator.id(),
                replication: r,
                estimate,
                sq_error,
                error,
            });
        }
    }
    out
}

/// Empirical MSE of one design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub design: String,
    pub mse_mean: f64,
    /// `1.96 · sd / √R` over per-replication squared errors.
    pub ci_half_width: f64,
    /// Successful replications.
    pub reps: usize,
    pub env: String,
    pub estimator: String,
    pub truth: f64,
    pub seed: u64,
    pub failures: usize,
}

/// Per-design means in first-appearance order. Needs at least two
/// successful replications per design.
pub fn summarize(results: &[ReplicationResult], env: &str, truth: f64, seed: u64) -> Result<Vec<MseSummary>> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    for r in results {
        if !order.iter().any(|(d, _)| *d == r.design) {
            order.push((&r.design, &r.estimator));
        }
    }
    order
        .into_iter()
        .map(|(design, estimator)| {
            let rows: Vec<&ReplicationResult> = results.iter().filter(|r| r.design == design).collect();
            let errs: Vec<f64> = rows.iter().filter_map(|r| r.sq_error).collect();
            if errs.len() < 2 {
                return Err(Error::invalid(format!(
                    "design {design} has {} successful replication(s); at least 2 are needed",
                    errs.len()
                )));
            }
            let (mean, sd) = mean_sd(&errs);
            Ok(MseSummary {
                design: design.to_string(),
                mse_mean: mean,
                ci_half_width: 1.96 * sd / (errs.len() as f64).sqrt(),
                reps: errs.len(),
                env: env.to_string(),
                estimator: estimator.to_string(),
                truth,
                seed,
                failures: rows.len() - errs.len(),
            })
        })
        .collect()
}

/// Candidate hyperparameters of a family, in ascending order.
pub fn grid_candidates(family: &str, grid: &GridSearchConfig, intervals_per_day: usize) -> Result<Vec<DesignSpec>> {
    let mut periods = grid.periods.clone().unwrap_or_else(|| vec![1, 2, 4, intervals_per_day]);
    periods.sort_unstable();
    periods.dedup();
    let mut probs = grid.switch_probs.clone();
    probs.sort_by(f64::total_cmp);
    probs.dedup();
    let mut burn = grid.burn_ins.clone();
    burn.sort_unstable();
    burn.dedup();
    let mut windows = grid.windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let out: Vec<DesignSpec> = match family {
        "TMDP" => vec![DesignSpec::Tmdp],
        "NMDP" => vec![DesignSpec::Nmdp],
        "WSY" => periods.iter().map(|&period| DesignSpec::Wsy { period }).collect(),
        "XCT" => probs.iter().map(|&p_switch| DesignSpec::Xct { p_switch }).collect(),
        "HW" => probs
            .iter()
            .flat_map(|&p_switch| burn.iter().map(move |&burn_in| DesignSpec::Hw { p_switch, burn_in }))
            .collect(),
        "BSZ" => probs
            .iter()
            .flat_map(|&p_switch| windows.iter().map(move |&window| DesignSpec::Bsz { p_switch, window }))
            .collect(),
        other => return Err(Error::Config(format!("no grid for design family {other}"))),
    };
    if out.is_empty() {
        return Err(Error::Config(format!("empty hyperparameter grid for {family}")));
    }
    Ok(out)
}

/// Outcome of a grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub family: String,
    pub best: DesignSpec,
    pub best_mse: f64,
    /// Every candidate with its tuning MSE (`None` when it failed).
    pub candidates: Vec<(DesignSpec, Option<f64>)>,
}

/// Picks the candidate with the lowest mean MSE on the tuning block
/// `streams.child("tuning", r)`, disjoint from evaluation replications.
/// Ties keep the earliest (smallest) hyperparameter; candidates with any
/// failed replication are skipped.
pub fn grid_search_baseline(
    env: &dyn Simulator,
    kind: EnvKind,
    family: &str,
    config: &BenchmarkConfig,
    grid: &GridSearchConfig,
    truth: f64,
    streams: &Streams,
) -> Result<GridChoice> {
    let candidates = grid_candidates(family, grid, env.intervals_per_day())?;
    let tuning = streams.child("tuning", 0);
    let mut scored = Vec::with_capacity(candidates.len());
    let mut best: Option<(DesignSpec, f64)> = None;
    for spec in candidates {
        let prepared = PreparedDesign::new(spec.clone(), env, kind, config)?;
        let rows = run_grid(env, std::slice::from_ref(&prepared), config.n_days, grid.replications, truth, &config.lstd, &tuning);
        let mse = if rows.iter().all(|r| r.sq_error.is_some()) {
            Some(rows.iter().filter_map(|r| r.sq_error).sum::<f64>() / rows.len() as f64)
        } else {
            None
        };
        if let Some(m) = mse {
            if best.as_ref().is_none_or(|(_, b)| m < *b) {
                best = Some((spec.clone(), m));
            }
        }
        scored.push((spec, mse));
    }
    let (best, best_mse) =
        best.ok_or_else(|| Error::invalid(format!("every {family} candidate failed on the tuning block")))?;
    Ok(GridChoice { family: family.to_string(), best, best_mse, candidates: scored })
}
