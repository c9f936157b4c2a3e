//! Linear toy model `z = SθW` trained by gradient descent, used to study how
//! the feature spectrum evolves under cross-entropy.

pub mod checks;
mod config;
mod model;
pub mod objective;
mod report;

pub use checks::{
    check_conservation, check_sigma_rates, detect_phases, drift_ratio_test, g_values, late_growth,
    primacy_selection_probe, step_drift, ConservationReport, DriftRatio, LateGrowth, PhaseReport,
    PrimacyReport, SigmaRateReport, PHASE_TOL,
};
pub use config::{InputMode, ToyConfig};
pub use model::{
    alignment_error, gd_step, init_balanced, run_trajectory, run_trajectory_with, weighted_rankme,
    StepRecord, StepState, ToyModelState, Trajectory,
};
pub use objective::{a_matrix, softmax_rows, Objective, ObjectiveRegistry};
pub use report::{
    format_float, summarize, write_trajectory_csv, ToySummary, GAP_FACTOR, SMALL_SIGMA_TOL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown loss `{0}` (available: {1})")]
    UnknownObjective(String, String),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parameters became non-finite at step {step}")]
    Diverged { step: usize },
}
