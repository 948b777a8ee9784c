use serde::{Deserialize, Serialize};

use super::RelativeNoise;
use crate::experiment::{Evaluation, Experiment, ExperimentError};
use crate::space::ParameterSpace;
use crate::Result;

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    /// `Σ x²` on `[-5, 5]^N`.
    Sphere,
    /// Chained Rosenbrock on `[-2, 2]^N`.
    Rosenbrock,
}

impl BenchmarkKind {
    pub fn space(self, dim: usize) -> Result<ParameterSpace> {
        match self {
            BenchmarkKind::Sphere => ParameterSpace::uniform(dim, -5.0, 5.0),
            BenchmarkKind::Rosenbrock => ParameterSpace::uniform(dim, -2.0, 2.0),
        }
    }

    pub fn cost(self, x: &[f64]) -> f64 {
        match self {
            BenchmarkKind::Sphere => sphere(x),
            BenchmarkKind::Rosenbrock => rosenbrock(x),
        }
    }
}

/// A standard test function served as an experiment.
#[derive(Debug, Clone)]
pub struct Benchmark {
    kind: BenchmarkKind,
    space: ParameterSpace,
    noise: RelativeNoise,
}

impl Benchmark {
    pub fn new(kind: BenchmarkKind, dim: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            kind,
            space: kind.space(dim)?,
            noise: RelativeNoise::new(noise_sigma, seed),
        })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }
}

impl Experiment for Benchmark {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<Evaluation, ExperimentError> {
        if x.len() != self.space.dim() {
            return Err(ExperimentError::Config(format!(
                "expected {} parameters, got {}",
                self.space.dim(),
                x.len()
            )));
        }
        Ok(Evaluation::good(self.noise.apply(self.kind.cost(x))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(sphere(&[3.0, 4.0]), 25.0);
        assert_eq!(rosenbrock(&[1.0, 1.0, 1.0]), 0.0);
        assert!((rosenbrock(&[-1.2, 1.0]) - 24.2).abs() < 1e-12);
        assert_eq!(rosenbrock(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn noiseless_benchmark_is_exact() {
        let mut b = Benchmark::new(BenchmarkKind::Sphere, 2, 0.0, 1).unwrap();
        assert_eq!(b.evaluate(&[1.0, 2.0]).unwrap().raw_cost, 5.0);
        assert!(b.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let run = |seed| {
            let mut b = Benchmark::new(BenchmarkKind::Rosenbrock, 3, 0.05, seed).unwrap();
            (0..5).map(|_| b.evaluate(&[0.0; 3]).unwrap().raw_cost).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }
}
