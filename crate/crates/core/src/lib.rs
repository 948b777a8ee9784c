//! Online black-box optimization driven by a stochastic neural-network ensemble.
//!
//! The optimizer alternates between two proposal streams:
//!
//! * a small ensemble of multilayer perceptrons, one of which is picked per
//!   proposal (Thompson sampling over the ensemble) and minimized inside the
//!   parameter box with a projected L-BFGS search;
//! * a differential-evolution explorer that produces the initial design and
//!   every fourth point afterwards, so the networks keep receiving unbiased data.
//!
//! Experiments are reached through the [`experiment::Experiment`] trait, either
//! in-process (see [`sim`]) or over a newline-delimited JSON TCP protocol.
//! Every evaluation is appended to a resumable [`archive::RunArchive`].

pub mod analysis;
pub mod archive;
pub mod config;
pub mod controller;
pub mod de;
pub mod experiment;
pub mod minimize;
pub mod mlp;
pub mod observation;
pub mod sann;
pub mod sim;
pub mod space;

mod error;
mod seed;

pub use self::error::{Error, Result};
pub use self::observation::{Dataset, Observation, Source};
pub use self::space::{ParameterSpace, ParameterVector};
