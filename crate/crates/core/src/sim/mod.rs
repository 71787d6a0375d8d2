//! Simulation environments.

pub mod bootstrap;
pub mod dispatch;
pub mod linear;

pub use bootstrap::{calibrate_delta, AADataset, BootstrapConfig, BootstrapEnv, Calibration};
pub use dispatch::{DispatchEnv, GridConfig};
pub use linear::{make_setting, true_ate, LinearEnv, LinearEnvConfig, Setting};
