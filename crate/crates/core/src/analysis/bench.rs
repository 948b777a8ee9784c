use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{MlpConfig, Normalizer};
use crate::observation::{Observation, Source};
use crate::sann::SannEnsemble;
use crate::sim::QuadraticLandscape;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub dim: usize,
    pub ensemble_size: usize,
    pub mlp: MlpConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    /// The default network, with every fit running exactly one training
    /// iteration so the timing measures work per data point rather than how
    /// long early stopping happens to take on a given dataset.
    fn default() -> Self {
        Self {
            dim: 10,
            ensemble_size: 3,
            mlp: MlpConfig {
                max_training_iterations: 1,
                ..MlpConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub count: usize,
    pub fit_seconds: f64,
}

/// `count` uniformly random points in `[-1, 1]^dim` labelled by a random
/// quadratic landscape.
pub fn synthetic_dataset(dim: usize, count: usize, seed: u64) -> Result<Vec<Observation>> {
    let landscape = QuadraticLandscape::new(dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    (0..count)
        .map(|i| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let cost = landscape.cost(&x)?;
            Ok(Observation {
                run_index: i as u64,
                source: Source::InitDe,
                params: x,
                raw_cost: cost,
                scaled_cost: 0.0,
                bad: false,
                wall_time: 0.0,
            })
        })
        .collect()
}

/// Times a fresh ensemble fit for each dataset size.
pub fn bench_scaling(counts: &[usize], config: &BenchConfig) -> Result<Vec<ScalingRow>> {
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("bench: point counts must be ascending".into()));
    }
    let mut mlp = config.mlp.clone();
    mlp.seed = config.seed;
    counts
        .iter()
        .map(|&count| {
            let data = synthetic_dataset(config.dim, count, config.seed)?;
            let mut ensemble = SannEnsemble::new(mlp.clone(), config.dim, config.ensemble_size)?;
            ensemble.set_normalizer(Normalizer::fit(&data)?);
            let start = Instant::now();
            ensemble.retrain_all(&data)?;
            Ok(ScalingRow {
                count,
                fit_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            dim: 3,
            ensemble_size: 2,
            mlp: MlpConfig {
                hidden_layers: 2,
                hidden_width: 8,
                epochs_per_iteration: 2,
                max_training_iterations: 1,
                ..MlpConfig::default()
            },
            seed: 1,
        }
    }

    #[test]
    fn one_row_per_count_with_positive_times() {
        let rows = bench_scaling(&[128, 256], &small()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].count, 128);
        assert!(rows.iter().all(|r| r.fit_seconds > 0.0));
    }

    #[test]
    fn descending_counts_are_rejected() {
        assert!(bench_scaling(&[256, 128], &small()).is_err());
    }

    #[test]
    fn datasets_are_deterministic() {
        assert_eq!(synthetic_dataset(4, 50, 9).unwrap(), synthetic_dataset(4, 50, 9).unwrap());
        assert_ne!(synthetic_dataset(4, 50, 9).unwrap(), synthetic_dataset(4, 50, 10).unwrap());
    }
}
