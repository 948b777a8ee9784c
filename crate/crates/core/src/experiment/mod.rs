//! The boundary between the optimizer and whatever produces costs.

mod probe;
mod tcp;
pub mod wire;

use std::io;

use serde::{Deserialize, Serialize};

pub use self::probe::{probe_cost, trapezoid, ProbeTrace};
pub use self::tcp::{serve_connection, ExperimentServer, SessionEnd, TcpExperiment, DEFAULT_TIMEOUT};

/// Result of one experimental run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub raw_cost: f64,
    /// The run failed outright (for a trap: no atoms were captured).
    pub bad: bool,
}

impl Evaluation {
    pub fn good(raw_cost: f64) -> Self {
        Self {
            raw_cost,
            bad: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// Timeouts, resets and remote evaluation errors; the call may be retried.
    #[error("transport: {0}")]
    Transport(String),

    /// The peer broke the wire protocol; the session cannot continue.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// The experiment does not match the session (e.g. dimension).
    #[error("configuration: {0}")]
    Config(String),
}

impl ExperimentError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExperimentError::Transport(_))
    }
}

impl From<io::Error> for ExperimentError {
    fn from(e: io::Error) -> Self {
        ExperimentError::Transport(e.to_string())
    }
}

/// Something that turns a parameter vector into a cost.
pub trait Experiment {
    fn dim(&self) -> usize;

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation, ExperimentError>;

    /// Tells the experiment the session is over.
    fn shutdown(&mut self) -> Result<(), ExperimentError> {
        Ok(())
    }
}

impl<E: Experiment + ?Sized> Experiment for Box<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation, ExperimentError> {
        (**self).evaluate(x)
    }

    fn shutdown(&mut self) -> Result<(), ExperimentError> {
        (**self).shutdown()
    }
}

/// An in-process experiment backed by a closure.
pub struct FnExperiment<F> {
    dim: usize,
    f: F,
}

impl<F> FnExperiment<F>
where
    F: FnMut(&[f64]) -> Evaluation,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Experiment for FnExperiment<F>
where
    F: FnMut(&[f64]) -> Evaluation,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation, ExperimentError> {
        if x.len() != self.dim {
            return Err(ExperimentError::Config(format!(
                "expected {} parameters, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok((self.f)(x))
    }
}
