use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Trajectory;
use crate::error::{Error, Result};

use super::run::{GridChoice, MseSummary, ReplicationResult};

/// Label written to outputs describing how intervals are built.
pub const CI_METHOD: &str = "normal-approximation-95: 1.96*sd/sqrt(reps)";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results_csv(rows: &[ReplicationResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["design", "estimator", "replication", "estimate", "sq_error", "error"])?;
    for r in rows {
        w.write_record([
            r.design.clone(),
            r.estimator.clone(),
            r.replication.to_string(),
            opt(r.estimate),
            opt(r.sq_error),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ReplicationResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Data(format!("bad number `{s}` in {}", path.display())))
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(Error::Data(format!("expected 6 columns in {}, found {}", path.display(), rec.len())));
        }
        out.push(ReplicationResult {
            design: rec[0].to_string(),
            estimator: rec[1].to_string(),
            replication: rec[2].parse().map_err(|_| Error::Data(format!("bad replication `{}`", &rec[2])))?,
            estimate: parse(&rec[3])?,
            sq_error: parse(&rec[4])?,
            error: (!rec[5].is_empty()).then(|| rec[5].to_string()),
        });
    }
    Ok(out)
}

/// Columns: design, mse_mean, ci_half_width, reps, env, estimator, truth, seed.
pub fn write_summary_csv(rows: &[MseSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["design", "mse_mean", "ci_half_width", "reps", "env", "estimator", "truth", "seed"])?;
    for s in rows {
        w.write_record([
            s.design.clone(),
            s.mse_mean.to_string(),
            s.ci_half_width.to_string(),
            s.reps.to_string(),
            s.env.clone(),
            s.estimator.clone(),
            s.truth.to_string(),
            s.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_json(rows: &[MseSummary], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        ci_method: &'a str,
        designs: &'a [MseSummary],
    }
    let text = serde_json::to_string_pretty(&Doc { ci_method: CI_METHOD, designs: rows })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One row per step: replication, design, day, interval, observation
/// coordinates, action (±1), outcome.
pub fn write_trajectories_csv(rows: &[(usize, String, Trajectory)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = rows.first().map_or(0, |(_, _, t)| t.obs_dim());
    let mut header = vec!["replication".to_string(), "design".into(), "day".into(), "interval".into()];
    header.extend((1..=d).map(|k| format!("obs_{k}")));
    header.extend(["action".to_string(), "outcome".into()]);
    w.write_record(&header)?;
    for (rep, design, traj) in rows {
        for (i, s) in traj.steps().iter().enumerate() {
            let (day, interval) = traj.day_interval(i);
            let mut rec = vec![rep.to_string(), design.clone(), (day + 1).to_string(), (interval + 1).to_string()];
            rec.extend(s.observation.values().iter().map(|v| v.to_string()));
            rec.extend([s.action.sign().to_string(), s.outcome.to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Cached Monte Carlo truth, keyed by a checksum of everything it depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthCache {
    pub checksum: String,
    pub env: String,
    pub seed: u64,
    pub rollouts: usize,
    pub value: f64,
    pub se: f64,
}

impl TruthCache {
    pub fn checksum_for(env_spec_json: &str, seed: u64, rollouts: usize) -> String {
        sha256_hex(format!("{env_spec_json}\u{0}{seed}\u{0}{rollouts}").as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// The cache at `path` if it exists and matches `checksum`.
pub fn load_truth(path: &Path, checksum: &str) -> Result<Option<TruthCache>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cache: TruthCache = serde_json::from_str(&text)?;
    if cache.checksum != checksum {
        log::warn!("{} was computed for a different environment; ignoring it", path.display());
        return Ok(None);
    }
    Ok(Some(cache))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Run description written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: u64,
    pub replications: usize,
    pub env: String,
    pub truth: Option<TruthCache>,
    pub ci_method: String,
    pub grid_search: Vec<GridChoice>,
    pub failures: usize,
    pub outputs: Vec<OutputFile>,
    /// From `SOURCE_DATE_EPOCH` when set; no wall-clock time otherwise.
    pub created: Option<u64>,
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
