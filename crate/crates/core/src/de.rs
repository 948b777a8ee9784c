//! Differential evolution in ask/tell form.
//!
//! The explorer never evaluates anything itself. [`DeState::ask`] hands out
//! a rand/1/bin trial vector and remembers which population member it targets;
//! [`DeState::tell`] applies greedy selection when that trial's cost arrives.
//! Costs for points the explorer did not propose (network proposals, the
//! initial design) are folded in as well, so both proposal streams share one
//! view of the landscape.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::space::{ParameterSpace, ParameterVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeStrategy {
    #[default]
    Rand1Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDesign {
    #[default]
    LatinHypercube,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    /// Population size; `None` means `max(15, 2N)`.
    pub population: Option<usize>,
    pub weight_f: f64,
    pub crossover_cr: f64,
    pub strategy: DeStrategy,
    pub initial_design: InitialDesign,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: None,
            weight_f: 0.9,
            crossover_cr: 0.9,
            strategy: DeStrategy::Rand1Bin,
            initial_design: InitialDesign::LatinHypercube,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn population_for(&self, dim: usize) -> usize {
        self.population.unwrap_or_else(|| (2 * dim).max(15))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_f > 0.0 && self.weight_f <= 2.0) {
            return Err(Error::InvalidConfig(format!(
                "de: weight_f must lie in (0, 2], got {}",
                self.weight_f
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_cr) {
            return Err(Error::InvalidConfig(format!(
                "de: crossover_cr must lie in [0, 1], got {}",
                self.crossover_cr
            )));
        }
        Ok(())
    }
}

/// `points` Latin-hypercube samples: along every axis each of the `points`
/// equal-width strata holds exactly one point.
pub fn latin_hypercube<R: Rng + ?Sized>(
    space: &ParameterSpace,
    points: usize,
    rng: &mut R,
) -> Vec<ParameterVector> {
    let mut design = vec![vec![0.0; space.dim()]; points];
    for (d, (lo, hi)) in space.lower().iter().zip(space.upper()).enumerate() {
        let strata = sample(rng, points, points).into_vec();
        for (point, stratum) in design.iter_mut().zip(strata) {
            let u = (stratum as f64 + rng.random::<f64>()) / points as f64;
            point[d] = (lo + u * (hi - lo)).clamp(*lo, *hi);
        }
    }
    design.into_iter().map(ParameterVector::from_clamped).collect()
}

/// The `2N`-point exploratory initial design.
pub fn initial_design<R: Rng + ?Sized>(
    space: &ParameterSpace,
    kind: InitialDesign,
    rng: &mut R,
) -> Vec<ParameterVector> {
    let points = 2 * space.dim();
    match kind {
        InitialDesign::LatinHypercube => latin_hypercube(space, points, rng),
        InitialDesign::Uniform => (0..points).map(|_| space.sample_uniform(rng)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub params: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingTrial {
    params: Vec<f64>,
    target: usize,
}

#[derive(Debug, Clone)]
pub struct DeState {
    config: DeConfig,
    capacity: usize,
    population: Vec<Member>,
    pending: Vec<PendingTrial>,
    next_target: usize,
    generation: u64,
}

impl DeState {
    pub fn new(config: DeConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let capacity = config.population_for(dim);
        Ok(Self {
            config,
            capacity,
            population: Vec::with_capacity(capacity),
            pending: Vec::new(),
            next_target: 0,
            generation: 0,
        })
    }

    pub fn config(&self) -> &DeConfig {
        &self.config
    }

    pub fn population(&self) -> &[Member] {
        &self.population
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Completed sweeps of trial targets over the population.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn best(&self) -> Option<&Member> {
        self.population
            .iter()
            .fold(None, |best: Option<&Member>, m| match best {
                Some(b) if b.cost <= m.cost => Some(b),
                _ => Some(m),
            })
    }

    /// The next point to evaluate.
    ///
    /// While the population is below capacity this is a uniform sample that
    /// fills it; afterwards it is a rand/1/bin trial.
    pub fn ask<R: Rng + ?Sized>(&mut self, space: &ParameterSpace, rng: &mut R) -> Result<ParameterVector> {
        if self.capacity < 4 {
            return Err(Error::PopulationTooSmall(self.capacity));
        }
        if self.population.len() < self.capacity {
            return Ok(space.sample_uniform(rng));
        }
        let n = self.population.len();
        let target = self.next_target;
        self.next_target += 1;
        if self.next_target == n {
            self.next_target = 0;
            self.generation += 1;
        }

        // Three distinct members, none of them the target.
        let picks = sample(rng, n - 1, 3).into_vec();
        let [a, b, c] = [picks[0], picks[1], picks[2]].map(|i| if i >= target { i + 1 } else { i });
        let (pa, pb, pc) = (
            &self.population[a].params,
            &self.population[b].params,
            &self.population[c].params,
        );
        let base = &self.population[target].params;
        let dim = base.len();
        let forced = rng.random_range(0..dim);
        let f = self.config.weight_f;
        let mut trial: Vec<f64> = (0..dim)
            .map(|j| {
                if j == forced || rng.random::<f64>() < self.config.crossover_cr {
                    pa[j] + f * (pb[j] - pc[j])
                } else {
                    base[j]
                }
            })
            .collect();
        space.clamp_in_place(&mut trial);
        self.pending.push(PendingTrial {
            params: trial.clone(),
            target,
        });
        Ok(ParameterVector::from_clamped(trial))
    }

    /// Reports the cost of `x`.
    ///
    /// A pending trial replaces its target iff `cost <= target cost`. Any
    /// other point fills the population while it is below capacity and
    /// afterwards replaces the worst member iff strictly better.
    pub fn tell(&mut self, x: &[f64], cost: f64) {
        let cost = if cost.is_nan() { f64::INFINITY } else { cost };
        if let Some(pos) = self.pending.iter().position(|p| p.params == x) {
            let trial = self.pending.swap_remove(pos);
            let member = &mut self.population[trial.target];
            if cost <= member.cost {
                *member = Member {
                    params: trial.params,
                    cost,
                };
            }
            return;
        }
        if self.population.len() < self.capacity {
            self.population.push(Member {
                params: x.to_vec(),
                cost,
            });
            return;
        }
        let worst = self
            .population
            .iter()
            .enumerate()
            .fold(0, |w, (i, m)| if m.cost > self.population[w].cost { i } else { w });
        if cost < self.population[worst].cost {
            self.population[worst] = Member {
                params: x.to_vec(),
                cost,
            };
        }
    }

    /// Forgets trials that were asked but never told.
    pub fn clear_pending(&mut self) {
        self.pending.clear();
    }
}
