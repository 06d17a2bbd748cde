//! Experiment runner: configs, matched trial batches, reports.

pub mod config;
pub mod experiment;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{
    emit_transcripts, play_trial, run_experiment, CheckStatus, ExperimentReport, HarnessError,
    MechanismResult, PolicyResult, RunResults,
};
pub use verify::{verify_cholesky, CholeskyReport};
