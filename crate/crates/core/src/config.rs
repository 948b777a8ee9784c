//! Session configuration files.
//!
//! ```json
//! {
//!   "space": {"dim": 2, "lower": [0, 0], "upper": [1, 1]},
//!   "controller": {"max_runs": 100},
//!   "experiment": {"kind": "tcp", "address": "127.0.0.1:5555"}
//! }
//! ```
//!
//! Only `space` is required. `mlp`, `de` and `controller` take the defaults of
//! their types field by field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, OptimizerSettings};
use crate::de::DeConfig;
use crate::mlp::MlpConfig;
use crate::sim::SimModel;
use crate::space::ParameterSpace;
use crate::{Error, Result};

fn default_timeout() -> f64 {
    crate::experiment::DEFAULT_TIMEOUT.as_secs_f64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExperimentConfig {
    /// An experiment server reached over the wire protocol.
    Tcp {
        address: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
    /// A built-in simulator run in-process.
    Sim {
        model: SimModel,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub space: ParameterSpace,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub de: DeConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
}

impl SessionConfig {
    pub fn new(space: ParameterSpace) -> Self {
        Self {
            space,
            mlp: MlpConfig::default(),
            de: DeConfig::default(),
            controller: ControllerConfig::default(),
            experiment: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        self.de.validate()?;
        self.controller.validate(self.space.dim())?;
        if let Some(ExperimentConfig::Tcp { timeout_secs, .. }) = &self.experiment {
            if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                return Err(Error::InvalidConfig("experiment: timeout_secs must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            mlp: self.mlp.clone(),
            de: self.de.clone(),
            controller: self.controller.clone(),
        }
    }
}
