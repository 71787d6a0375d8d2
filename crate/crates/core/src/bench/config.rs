use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::designs::{DesignSpec, EnvKind, EstimatorId};
use crate::env::Simulator;
use crate::error::{Error, Result};
use crate::estimators::LstdConfig;
use crate::rng::Streams;
use crate::sim::bootstrap::{load_aa_csv, synth_aa_generator};
use crate::sim::dispatch::{collect_surrogate_data, fit_surrogate, SurrogateEnv};
use crate::sim::{make_setting, BootstrapConfig, BootstrapEnv, DispatchEnv, GridConfig, LinearEnv, Setting};
use crate::trl::TrlConfig;

fn four() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

fn sixty() -> usize {
    60
}

fn two_hundred() -> usize {
    200
}

/// Which simulator to benchmark on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    Linear {
        setting: Setting,
        #[serde(default = "four")]
        intervals_per_day: usize,
    },
    Bootstrap {
        /// A/A panel CSV; a synthetic panel is generated when absent.
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default = "sixty")]
        synthetic_days: usize,
        #[serde(default = "four")]
        intervals_per_day: usize,
        #[serde(default)]
        delta_1: f64,
        #[serde(default)]
        delta_2: f64,
        #[serde(default)]
        rho: f64,
        #[serde(default = "one")]
        phi_coef: f64,
    },
    Dispatch {
        #[serde(default)]
        grid: GridConfig,
        /// Benchmark on the fitted surrogate instead of the grid world.
        #[serde(default)]
        surrogate: bool,
        #[serde(default = "two_hundred")]
        surrogate_days: usize,
    },
}

/// An environment ready for rollouts.
pub struct BuiltEnv {
    pub sim: Box<dyn Simulator>,
    pub kind: EnvKind,
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Linear { .. } => EnvKind::Linear,
            EnvSpec::Bootstrap { .. } => EnvKind::Bootstrap,
            EnvSpec::Dispatch { .. } => EnvKind::Dispatch,
        }
    }

    /// Builds the simulator; any randomness used in construction (synthetic
    /// A/A data, value learning, surrogate data) comes from `streams`.
    pub fn build(&self, streams: &Streams) -> Result<BuiltEnv> {
        let sim: Box<dyn Simulator> = match self {
            EnvSpec::Linear { setting, intervals_per_day } => {
                Box::new(LinearEnv::new(make_setting(*setting, *intervals_per_day)?)?)
            }
            EnvSpec::Bootstrap { data, synthetic_days, intervals_per_day, delta_1, delta_2, rho, phi_coef } => {
                let dataset = match data {
                    Some(path) => load_aa_csv(path)?,
                    None => synth_aa_generator(*synthetic_days, *intervals_per_day, &mut streams.rng("aa-data", 0))?,
                };
                let cfg = BootstrapConfig { delta_1: *delta_1, delta_2: *delta_2, rho: *rho, phi_coef: *phi_coef };
                Box::new(BootstrapEnv::build(&dataset, &cfg)?)
            }
            EnvSpec::Dispatch { grid, surrogate, surrogate_days } => {
                let world = DispatchEnv::new(grid.clone(), &streams.child("dispatch-value", 0))?;
                if *surrogate {
                    let days = collect_surrogate_data(&world, *surrogate_days, &streams.child("surrogate", 0))?;
                    let model = fit_surrogate(&days, grid.orders_per_day as f64, grid.drivers as f64)?;
                    Box::new(SurrogateEnv::new(model)?)
                } else {
                    Box::new(world)
                }
            }
        };
        Ok(BuiltEnv { sim, kind: self.kind() })
    }

    /// Label used in output files.
    pub fn label(&self) -> String {
        match self {
            EnvSpec::Linear { setting, .. } => format!("linear-{}", setting.id()),
            EnvSpec::Bootstrap { rho, phi_coef, .. } => format!("bootstrap(rho={rho},phi_coef={phi_coef})"),
            EnvSpec::Dispatch { surrogate: true, .. } => "dispatch-surrogate".into(),
            EnvSpec::Dispatch { .. } => "dispatch".into(),
        }
    }
}

fn twenty_thousand() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// Rollout pairs for the Monte Carlo ATE.
    #[serde(default = "twenty_thousand")]
    pub rollouts: usize,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig { rollouts: twenty_thousand() }
    }
}

fn fifty() -> usize {
    50
}

/// Hyperparameter grids for tuning baseline families on a held-out seed block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSearchConfig {
    /// Families to tune: any of WSY, HW, BSZ, XCT, TMDP, NMDP.
    pub families: Vec<String>,
    /// Switchback periods; defaults to `{1, 2, 4, M}`.
    pub periods: Option<Vec<usize>>,
    pub switch_probs: Vec<f64>,
    pub burn_ins: Vec<usize>,
    pub windows: Vec<usize>,
    #[serde(default = "fifty")]
    pub replications: usize,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        GridSearchConfig {
            families: Vec::new(),
            periods: None,
            switch_probs: vec![0.25, 0.5],
            burn_ins: vec![1, 2],
            windows: vec![0, 1],
            replications: fifty(),
        }
    }
}

/// TRL training run settings (the network itself is `[trl]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Index of the training stream tree; kept apart from evaluation seeds.
    pub seed: u64,
    /// Checkpoint file name inside the output directory.
    pub checkpoint: String,
    pub log: String,
    /// Days per training episode; defaults to the benchmark's `n_days`.
    pub n_days: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { seed: 0, checkpoint: "trl_checkpoint.json".into(), log: "trl_training_log.csv".into(), n_days: None }
    }
}

fn thirty() -> usize {
    30
}

fn hundred() -> usize {
    100
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Top-level benchmark file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub environment: EnvSpec,
    #[serde(default = "thirty")]
    pub n_days: usize,
    #[serde(default = "hundred")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub designs: Vec<DesignSpec>,
    /// Estimator per design family, replacing the default pairing.
    #[serde(default)]
    pub estimator_overrides: BTreeMap<String, EstimatorId>,
    #[serde(default)]
    pub grid_search: Option<GridSearchConfig>,
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub lstd: LstdConfig,
    #[serde(default)]
    pub trl: TrlConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config("replications must be >= 2".into()));
        }
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be >= 1".into()));
        }
        if self.truth.rollouts < 2 {
            return Err(Error::Config("truth.rollouts must be >= 2".into()));
        }
        for family in self.estimator_overrides.keys() {
            if !["TMDP", "NMDP", "WSY", "HW", "BSZ", "XCT", "TRL", "IID"].contains(&family.as_str()) {
                return Err(Error::Config(format!("estimator override for unknown design family {family}")));
            }
        }
        self.trl.validate()
    }

    /// Root of every evaluation replication's streams.
    pub fn streams(&self) -> Streams {
        Streams::new(self.seed)
    }

    pub fn env_streams(&self) -> Streams {
        self.streams().child("environment-build", 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_rejects_unknown_keys() {
        let c = BenchmarkConfig::from_toml("[environment]\nkind = \"linear\"\nsetting = \"ii\"\n").unwrap();
        assert_eq!(c.replications, 100);
        assert_eq!(c.environment.label(), "linear-ii");
        assert!(matches!(
            BenchmarkConfig::from_toml("replcations = 3\n[environment]\nkind = \"linear\"\nsetting = \"i\"\n"),
            Err(Error::Config(_))
        ));
        assert!(BenchmarkConfig::from_toml("replications = 1\n[environment]\nkind = \"linear\"\nsetting = \"i\"\n")
            .is_err());
        let full = r#"
seed = 7
replications = 3
[environment]
kind = "bootstrap"
delta_1 = 0.05
delta_2 = 0.05
rho = 0.4
[[designs]]
kind = "wsy"
period = 2
[[designs]]
kind = "tmdp"
[estimator_overrides]
TMDP = { kind = "lstd" }
[trl]
d_model = 16
n_heads = 2
[grid_search]
families = ["WSY"]
"#;
        let c = BenchmarkConfig::from_toml(full).unwrap();
        assert_eq!(c.designs.len(), 2);
        assert_eq!(c.trl.d_model, 16);
        assert_eq!(c.estimator_overrides["TMDP"], EstimatorId::Lstd);
        assert_eq!(c.grid_search.unwrap().switch_probs, vec![0.25, 0.5]);
    }
}
