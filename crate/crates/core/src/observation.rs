//! Observations and the in-memory dataset of a session.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::space::ParameterSpace;
use crate::{Error, Result};

/// Which proposal stream produced a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Source {
    /// Initial exploration design.
    InitDe,
    /// Differential-evolution exploration after the initial design.
    De,
    /// Minimum of the given ensemble member.
    Net(usize),
    /// Supplied from outside the optimizer.
    Manual,
}

impl Source {
    pub fn is_net(self) -> bool {
        matches!(self, Source::Net(_))
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::InitDe => f.write_str("init_de"),
            Source::De => f.write_str("de"),
            Source::Net(k) => write!(f, "net_{k}"),
            Source::Manual => f.write_str("manual"),
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "init_de" => Ok(Source::InitDe),
            "de" => Ok(Source::De),
            "manual" => Ok(Source::Manual),
            other => other
                .strip_prefix("net_")
                .and_then(|k| k.parse().ok())
                .map(Source::Net)
                .ok_or_else(|| format!("unknown source {other:?}")),
        }
    }
}

impl TryFrom<String> for Source {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Source> for String {
    fn from(s: Source) -> String {
        s.to_string()
    }
}

/// One experimental evaluation.
///
/// Field order is the key order of archive lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub run_index: u64,
    pub source: Source,
    pub params: Vec<f64>,
    pub raw_cost: f64,
    pub scaled_cost: f64,
    pub bad: bool,
    /// Seconds since the session started.
    pub wall_time: f64,
}

/// The ordered observations of one session over one space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    space: ParameterSpace,
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(space: ParameterSpace) -> Self {
        Self {
            space,
            observations: Vec::new(),
        }
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The run index the next observation must carry.
    pub fn next_run_index(&self) -> u64 {
        self.observations.last().map_or(0, |o| o.run_index + 1)
    }

    /// Appends an observation after checking its dimension and run index.
    pub fn push(&mut self, obs: Observation) -> Result<()> {
        self.space.check_dim(obs.params.len())?;
        if let Some(last) = self.observations.last() {
            if obs.run_index <= last.run_index {
                return Err(Error::RunIndexOrder {
                    previous: last.run_index,
                    got: obs.run_index,
                });
            }
        }
        self.observations.push(obs);
        Ok(())
    }

    pub(crate) fn pop_last(&mut self) -> Option<Observation> {
        self.observations.pop()
    }

    /// The non-bad observation of minimal raw cost; the earliest wins ties.
    pub fn best(&self) -> Result<&Observation> {
        self.observations
            .iter()
            .filter(|o| !o.bad)
            .fold(None, |best: Option<&Observation>, o| match best {
                Some(b) if b.raw_cost <= o.raw_cost => Some(b),
                _ => Some(o),
            })
            .ok_or(Error::NoValidObservation)
    }

    /// Scaled costs of every observation relative to the dataset's own best
    /// and the given failure cost.
    pub fn rescaled_costs(&self, failure_raw: f64) -> Vec<f64> {
        let best = self.best().map(|b| b.raw_cost).ok();
        self.observations
            .iter()
            .map(|o| match best {
                _ if o.bad => 1.0,
                Some(best) => crate::controller::scale_cost(o.raw_cost, best, failure_raw),
                None => 1.0,
            })
            .collect()
    }
}

/// Free-function form of [`Dataset::best`].
pub fn best_observation(dataset: &Dataset) -> Result<&Observation> {
    dataset.best()
}
