use std::io;
use std::path::PathBuf;

use crate::experiment::ExperimentError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no valid observation: every observation is flagged bad or the dataset is empty")]
    NoValidObservation,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("run_index {got} does not follow {previous}")]
    RunIndexOrder { previous: u64, got: u64 },

    #[error("training diverged: loss became non-finite")]
    TrainingDiverged,

    #[error("ensemble has not been trained")]
    NotTrained,

    #[error("population too small: {0} members, at least 4 required")]
    PopulationTooSmall(usize),

    #[error("probe trace: {0}")]
    InvalidTrace(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("archive {path}: {message}")]
    Archive { path: PathBuf, message: String },

    #[error("experiment: {0}")]
    Experiment(#[from] ExperimentError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
