//! Densely connected perceptron regression used as the cost model.
//!
//! Hidden layers use the exact (erf-based) GELU activation and the output head
//! is linear. Inputs and costs pass through a z-score [`Normalizer`] that is
//! fitted once and then frozen.

mod activation;
mod network;
mod normalizer;
mod train;

use serde::{Deserialize, Serialize};

pub use self::activation::{gelu, gelu_derivative, std_normal_cdf};
pub use self::network::{Checkpoint, Layer, MlpNetwork};
pub use self::normalizer::Normalizer;
pub use self::train::{continue_training, run_early_stopping, TrainReport};

use crate::{Error, Result};

/// Network topology and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub l2_coefficient: f64,
    pub batch_size: usize,
    pub epochs_per_iteration: usize,
    /// Another training iteration runs only if the loss falls below this
    /// fraction of the loss at the iteration's start.
    pub continue_threshold_ratio: f64,
    pub max_training_iterations: usize,
    pub adam_step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 5,
            hidden_width: 64,
            l2_coefficient: 1e-8,
            batch_size: 16,
            epochs_per_iteration: 100,
            continue_threshold_ratio: 0.8,
            max_training_iterations: 50,
            adam_step: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("mlp: {what}")));
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if self.batch_size == 0 || self.epochs_per_iteration == 0 {
            return bad("batch_size and epochs_per_iteration must be positive");
        }
        if self.max_training_iterations == 0 {
            return bad("max_training_iterations must be positive");
        }
        if !(self.continue_threshold_ratio > 0.0 && self.continue_threshold_ratio < 1.0) {
            return bad("continue_threshold_ratio must lie strictly between 0 and 1");
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return bad("l2_coefficient must be finite and non-negative");
        }
        if !(self.adam_step > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_epsilon > 0.0)
        {
            return bad("Adam parameters out of range");
        }
        Ok(())
    }
}
