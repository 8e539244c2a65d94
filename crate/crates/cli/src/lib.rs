//! Experiment runner: training, evaluation, SNR and DCR sweeps, separate-coding
//! baselines, equalizer benchmarks and report generation, all driven by TOML
//! experiment specs and writing CSV tables and graymap dumps.

mod error;
pub mod pgm;
pub mod report;
pub mod runner;
pub mod spec;

pub use error::{CliError, Result};
pub use runner::{run, Outcome};
pub use spec::{Experiment, ExperimentSpec, Mode, Overrides};
