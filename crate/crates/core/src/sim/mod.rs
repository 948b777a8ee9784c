//! In-process experiments for tests, benchmarks and `serve-sim`.

mod benchmarks;
mod mot;
mod quadratic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use self::benchmarks::{rosenbrock, sphere, Benchmark, BenchmarkKind};
pub use self::mot::{transmission, MotConstants, MotOutcome, MotState, MotSurrogate, BINS};
pub use self::quadratic::QuadraticLandscape;

/// Multiplicative Gaussian noise `cost · (1 + σ·g)` with its own seeded stream.
#[derive(Debug, Clone)]
pub struct RelativeNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl RelativeNoise {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn apply(&mut self, cost: f64) -> f64 {
        if self.sigma == 0.0 {
            return cost;
        }
        let g: f64 = StandardNormal.sample(&mut self.rng);
        cost * (1.0 + self.sigma * g)
    }
}

/// The simulators selectable from configuration files and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    Mot,
    Quadratic,
    Sphere,
    Rosenbrock,
}

impl std::str::FromStr for SimModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mot" => Ok(SimModel::Mot),
            "quadratic" => Ok(SimModel::Quadratic),
            "sphere" => Ok(SimModel::Sphere),
            "rosenbrock" => Ok(SimModel::Rosenbrock),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

impl SimModel {
    /// Dimension used when none is given.
    pub fn default_dim(self) -> usize {
        match self {
            SimModel::Mot => 3 * BINS,
            SimModel::Quadratic => 10,
            SimModel::Sphere | SimModel::Rosenbrock => 5,
        }
    }

    /// Builds the simulator and its native parameter space. The MOT surrogate
    /// has a fixed dimension; `dim` must then be `None` or 63.
    pub fn build(
        self,
        dim: Option<usize>,
        noise_sigma: f64,
        seed: u64,
    ) -> crate::Result<(Box<dyn crate::experiment::Experiment + Send>, crate::ParameterSpace)> {
        let dim = dim.unwrap_or(self.default_dim());
        Ok(match self {
            SimModel::Mot => {
                if dim != 3 * BINS {
                    return Err(crate::Error::DimensionMismatch {
                        expected: 3 * BINS,
                        actual: dim,
                    });
                }
                let sim = MotSurrogate::new(noise_sigma, seed);
                let space = sim.space().clone();
                (Box::new(sim), space)
            }
            SimModel::Quadratic => {
                let sim = QuadraticLandscape::new(dim, seed)?;
                let space = sim.space().clone();
                if noise_sigma == 0.0 {
                    (Box::new(sim), space)
                } else {
                    (Box::new(Noisy::new(sim, noise_sigma, seed)), space)
                }
            }
            SimModel::Sphere | SimModel::Rosenbrock => {
                let kind = if self == SimModel::Sphere {
                    BenchmarkKind::Sphere
                } else {
                    BenchmarkKind::Rosenbrock
                };
                let sim = Benchmark::new(kind, dim, noise_sigma, seed)?;
                let space = sim.space().clone();
                (Box::new(sim), space)
            }
        })
    }
}

/// Adds relative noise to any experiment.
pub struct Noisy<E> {
    inner: E,
    noise: RelativeNoise,
}

impl<E> Noisy<E> {
    pub fn new(inner: E, sigma: f64, seed: u64) -> Self {
        Self {
            inner,
            noise: RelativeNoise::new(sigma, crate::seed::derive(seed, 0x5eed)),
        }
    }
}

impl<E: crate::experiment::Experiment> crate::experiment::Experiment for Noisy<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(
        &mut self,
        x: &[f64],
    ) -> std::result::Result<crate::experiment::Evaluation, crate::experiment::ExperimentError> {
        let mut e = self.inner.evaluate(x)?;
        e.raw_cost = self.noise.apply(e.raw_cost);
        Ok(e)
    }
}
