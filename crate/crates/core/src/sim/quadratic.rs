use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::experiment::{Evaluation, Experiment, ExperimentError};
use crate::space::ParameterSpace;
use crate::Result;

/// `(x − c)ᵀ A (x − c)` with a random symmetric positive-definite `A` whose
/// eigenvalues lie in `[0.5, 2]` and a random center `c` inside the box.
#[derive(Debug, Clone)]
pub struct QuadraticLandscape {
    space: ParameterSpace,
    center: Vec<f64>,
    /// Row-major `dim × dim`.
    curvature: Vec<f64>,
}

impl QuadraticLandscape {
    pub const MIN_EIGENVALUE: f64 = 0.5;
    pub const MAX_EIGENVALUE: f64 = 2.0;

    /// A landscape on `[-1, 1]^dim`.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::random(ParameterSpace::uniform(dim, -1.0, 1.0)?, seed)
    }

    pub fn random(space: ParameterSpace, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.dim();
        let center = space.sample_uniform(&mut rng).into_inner();
        let q = random_orthogonal(n, &mut rng);
        let eig: Vec<f64> = (0..n)
            .map(|_| rng.random_range(Self::MIN_EIGENVALUE..=Self::MAX_EIGENVALUE))
            .collect();
        let mut curvature = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| q[i * n + k] * eig[k] * q[j * n + k]).sum();
                curvature[i * n + j] = v;
                curvature[j * n + i] = v;
            }
        }
        Ok(Self {
            space,
            center,
            curvature,
        })
    }

    /// Explicit center and row-major curvature; the caller vouches for positive
    /// definiteness.
    pub fn from_parts(space: ParameterSpace, center: Vec<f64>, curvature: Vec<f64>) -> Result<Self> {
        let n = space.dim();
        space.check_dim(center.len())?;
        if curvature.len() != n * n {
            return Err(crate::Error::DimensionMismatch {
                expected: n * n,
                actual: curvature.len(),
            });
        }
        Ok(Self {
            space,
            center,
            curvature,
        })
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn cost(&self, x: &[f64]) -> Result<f64> {
        self.space.check_dim(x.len())?;
        let n = self.dim();
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let mut total = 0.0;
        for i in 0..n {
            let row = &self.curvature[i * n..(i + 1) * n];
            let ad: f64 = row.iter().zip(&d).map(|(a, b)| a * b).sum();
            total += d[i] * ad;
        }
        Ok(total)
    }
}

/// Orthonormal columns by modified Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for j in 0..n {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let proj: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                for (v, q) in rest[0].iter_mut().zip(&done[i]) {
                    *v -= proj * q;
                }
            }
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            let mut q = vec![0.0; n * n];
            for (j, col) in cols.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    q[i * n + j] = *v;
                }
            }
            return q;
        }
    }
}

impl Experiment for QuadraticLandscape {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<Evaluation, ExperimentError> {
        self.cost(x)
            .map(Evaluation::good)
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }
}
