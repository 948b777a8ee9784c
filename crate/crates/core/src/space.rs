//! Box-bounded parameter spaces.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An `N`-dimensional box `[lower, upper]`, the domain of every proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct ParameterSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

impl TryFrom<RawSpace> for ParameterSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        if let Some(dim) = raw.dim {
            if dim != raw.lower.len() {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: raw.lower.len(),
                });
            }
        }
        let space = ParameterSpace::new(raw.lower, raw.upper)?;
        match raw.names {
            Some(names) if !names.is_empty() => space.with_names(names),
            _ => Ok(space),
        }
    }
}

impl From<ParameterSpace> for RawSpace {
    fn from(space: ParameterSpace) -> Self {
        RawSpace {
            dim: Some(space.dim()),
            lower: space.lower,
            upper: space.upper,
            names: space.names,
        }
    }
}

impl ParameterSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "bounds of dimension {i} must be finite with lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            names: None,
        })
    }

    /// The same interval `[lower, upper]` on every one of `dim` axes.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            })
        }
    }

    /// Projects `x` componentwise onto the box.
    pub fn clamp(&self, x: &[f64]) -> Result<ParameterVector> {
        self.check_dim(x.len())?;
        let mut values = x.to_vec();
        self.clamp_in_place(&mut values);
        Ok(ParameterVector(values))
    }

    /// Projects `x` in place. `x` must have length `dim`.
    pub fn clamp_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            // NaN maps to the lower bound so a clamped vector is always finite.
            *v = if v.is_nan() { *lo } else { v.max(*lo).min(*hi) };
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, lo), hi)| lo <= v && v <= hi)
    }

    pub fn center(&self) -> ParameterVector {
        ParameterVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    /// Draws a point uniformly from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| {
                    let v = lo + rng.random::<f64>() * (hi - lo);
                    v.min(*hi)
                })
                .collect(),
        )
    }
}

/// A point of a [`ParameterSpace`], already projected onto its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Wraps values that are known to lie inside the box.
    pub(crate) fn from_clamped(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
