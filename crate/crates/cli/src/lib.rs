//! Experiment harness around the spatio-temporal GP, the zero-order
//! GP-MPC controller and the race simulator.

pub mod bench;
pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod variants;

pub use bench::{run_bench, BenchReport, BenchRow, BenchSummary};
pub use checks::{run_all, Check};
pub use config::{BenchConfig, ExperimentConfig, GpConfig, InducingPlacement};
pub use error::{Error, Result};
pub use experiment::{replay, run_race, write_race, ReplayReport};
pub use variants::{build_model, Variant};
