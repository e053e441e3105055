//! Experiment orchestration for the `sit` CLI: configuration, the
//! three-stage pipeline per method, sweeps, reports and plot data.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plots;
pub mod report;
pub mod sweep;

pub use config::{DatasetConfig, EnvConfig, ExperimentConfig, Method};
pub use error::{HarnessError, Result};
pub use pipeline::{run, run_with};
pub use plots::emit_plots;
pub use report::RunReport;
pub use sweep::{sweep, SweepParam};
