//! Replicated benchmark harness: environments × designs × estimators,
//! empirical MSE with normal-approximation confidence intervals, and the
//! CSV/JSON artifacts the plotting scripts read.

pub mod cli;
mod config;
mod output;
mod run;

pub use config::{BenchmarkConfig, BuiltEnv, EnvSpec, GridSearchConfig, TrainingConfig, TruthConfig};
pub use output::{
    load_truth, read_results_csv, sha256_file, write_manifest, write_results_csv, write_summary_csv, write_summary_json,
    write_trajectories_csv, Manifest, OutputFile, TruthCache, CI_METHOD,
};
pub use run::{
    estimate, grid_candidates, grid_search_baseline, prepare_designs, run_grid, summarize, GridChoice, MseSummary,
    PreparedDesign, ReplicationResult,
};
