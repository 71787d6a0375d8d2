//! Simulation environments, ATE estimators, allocation designs and a learned
//! transformer allocation agent for time-series A/B experiments with
//! carryover effects.

pub mod bench;
pub mod designs;
pub mod domain;
pub mod env;
pub mod error;
pub mod estimators;
mod linalg;
pub mod rng;

pub use domain::{Action, DesignPolicy, History, Observation, PanelData, StepTriplet, Trajectory, Window};
pub use error::{Error, Result};
pub mod sim;
pub mod trl;
