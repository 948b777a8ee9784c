use serde::{Deserialize, Serialize};

use crate::observation::Observation;
use crate::{Error, Result};

/// Frozen z-score transform for inputs and costs.
///
/// Standard deviations use the population (divide-by-M) convention; columns
/// without variance store a standard deviation of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub cost_mean: f64,
    pub cost_std: f64,
}

impl Normalizer {
    /// The identity transform on `dim` inputs.
    pub fn identity(dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; dim],
            input_std: vec![1.0; dim],
            cost_mean: 0.0,
            cost_std: 1.0,
        }
    }

    /// Fits on `observations`, usually the initial design.
    pub fn fit<'a, I>(observations: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let rows: Vec<&Observation> = observations.into_iter().collect();
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.params.len();
        let m = rows.len() as f64;

        let mut input_mean = vec![0.0; dim];
        for o in &rows {
            if o.params.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: o.params.len(),
                });
            }
            for (acc, v) in input_mean.iter_mut().zip(&o.params) {
                *acc += v;
            }
        }
        input_mean.iter_mut().for_each(|v| *v /= m);

        let mut input_var = vec![0.0; dim];
        for o in &rows {
            for ((acc, v), mu) in input_var.iter_mut().zip(&o.params).zip(&input_mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let input_std = input_var.into_iter().map(|v| nonzero_std(v / m)).collect();

        let cost_mean = rows.iter().map(|o| o.raw_cost).sum::<f64>() / m;
        let cost_var = rows
            .iter()
            .map(|o| (o.raw_cost - cost_mean).powi(2))
            .sum::<f64>()
            / m;

        Ok(Self {
            input_mean,
            input_std,
            cost_mean,
            cost_std: nonzero_std(cost_var),
        })
    }

    pub fn dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn normalize_input_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), mu), sd) in out
            .iter_mut()
            .zip(x)
            .zip(&self.input_mean)
            .zip(&self.input_std)
        {
            *o = (v - mu) / sd;
        }
    }

    pub fn normalize_cost(&self, cost: f64) -> f64 {
        (cost - self.cost_mean) / self.cost_std
    }

    pub fn denormalize_cost(&self, z: f64) -> f64 {
        z * self.cost_std + self.cost_mean
    }
}

fn nonzero_std(variance: f64) -> f64 {
    let sd = variance.sqrt();
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        1.0
    }
}
