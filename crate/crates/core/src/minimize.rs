//! Bound-constrained limited-memory BFGS.
//!
//! The search direction is the L-BFGS two-loop direction restricted to the
//! variables that are not pinned at a bound by the gradient, and the step is a
//! backtracking Armijo search along the projected path `P(x + αd)`. Every
//! iterate is projected onto the box, so bounds hold exactly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::space::ParameterSpace;
use crate::{seed, Error, Result};

/// A differentiable objective. `evaluate` returns `f(x)` and writes `∇f(x)`
/// into `grad`.
pub trait Objective {
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

/// An objective assembled from separate value and gradient functions.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.gradient)(x, grad);
        (self.value)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    /// Convergence threshold on the ∞-norm of the projected gradient.
    pub grad_tol: f64,
    /// Random box-uniform starts added by [`multistart_minimize`].
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_evals: 500,
            grad_tol: 1e-6,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const CURVATURE_EPS: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 60;

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

/// `-H g` on the free variables, zero elsewhere.
fn two_loop_direction(grad: &[f64], history: &VecDeque<Pair>, free: &[bool]) -> Vec<f64> {
    let mut q: Vec<f64> = grad
        .iter()
        .zip(free)
        .map(|(g, &f)| if f { *g } else { 0.0 })
        .collect();
    let mut alphas = Vec::with_capacity(history.len());
    let mut used = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let sy = dot_masked(&pair.s, &pair.y, free);
        if sy <= CURVATURE_EPS {
            continue;
        }
        let rho = 1.0 / sy;
        let a = rho * dot_masked(&pair.s, &q, free);
        for ((qi, yi), &f) in q.iter_mut().zip(&pair.y).zip(free) {
            if f {
                *qi -= a * yi;
            }
        }
        alphas.push(a);
        used.push((pair, rho));
    }
    if let Some((newest, _)) = used.first() {
        let sy = dot_masked(&newest.s, &newest.y, free);
        let yy = dot_masked(&newest.y, &newest.y, free);
        if yy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((pair, rho), a) in used.iter().zip(&alphas).rev() {
        let b = rho * dot_masked(&pair.y, &q, free);
        for ((qi, si), &f) in q.iter_mut().zip(&pair.s).zip(free) {
            if f {
                *qi += (a - b) * si;
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn projected_gradient_norm(space: &ParameterSpace, x: &[f64], grad: &[f64]) -> f64 {
    x.iter()
        .zip(grad)
        .zip(space.lower().iter().zip(space.upper()))
        .map(|((xi, gi), (lo, hi))| (xi - (xi - gi).max(*lo).min(*hi)).abs())
        .fold(0.0, f64::max)
}

fn free_variables(space: &ParameterSpace, x: &[f64], grad: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(grad)
        .zip(space.lower().iter().zip(space.upper()))
        .map(|((xi, gi), (lo, hi))| !((xi <= lo && *gi > 0.0) || (xi >= hi && *gi < 0.0)))
        .collect()
}

/// Minimizes `objective` over the box from `x0` (projected first).
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    x0: &[f64],
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    let n = space.dim();
    let mut x = space.clamp(x0)?.into_inner();
    let mut grad = vec![0.0; n];
    let mut f = objective.evaluate(&x, &mut grad);
    let mut evals = 1;
    let mut iterations = 0;
    let mut converged = false;
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Ok(MinimizeResult {
            x,
            f,
            evals,
            iterations,
            converged,
        });
    }

    let memory = opts.memory.max(1);
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(memory);
    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];

    loop {
        if projected_gradient_norm(space, &x, &grad) <= opts.grad_tol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let free = free_variables(space, &x, &grad);
        let mut direction = two_loop_direction(&grad, &history, &free);
        let slope = dot_masked(&grad, &direction, &free);
        if !(slope < 0.0 && slope.is_finite()) {
            // Not a descent direction: fall back to steepest descent.
            history.clear();
            direction = two_loop_direction(&grad, &history, &free);
        }
        // Without curvature information, start from a unit-length step.
        let mut alpha = if history.is_empty() {
            let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm > 0.0 {
                (1.0 / norm).min(1.0)
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if evals >= opts.max_evals {
                break;
            }
            for ((xn, xi), di) in x_new.iter_mut().zip(&x).zip(&direction) {
                *xn = xi + alpha * di;
            }
            space.clamp_in_place(&mut x_new);
            let decrease: f64 = grad
                .iter()
                .zip(x_new.iter().zip(&x))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            if x_new == x {
                break;
            }
            let f_new = objective.evaluate(&x_new, &mut grad_new);
            evals += 1;
            if f_new.is_finite()
                && grad_new.iter().all(|g| g.is_finite())
                && f_new <= f + ARMIJO_C1 * decrease.min(0.0)
                && f_new <= f
            {
                accepted = Some(f_new);
                break;
            }
            alpha *= 0.5;
        }

        let Some(f_new) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > CURVATURE_EPS {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y });
        } else {
            history.clear();
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        f = f_new;
        iterations += 1;
    }

    Ok(MinimizeResult {
        x,
        f,
        evals,
        iterations,
        converged,
    })
}

/// Runs [`minimize`] from every supplied start and from `opts.restarts`
/// random box-uniform starts; returns the lowest result (earliest on ties).
pub fn multistart_minimize<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    starts: &[Vec<f64>],
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    if starts.is_empty() && opts.restarts == 0 {
        return Err(Error::InvalidConfig("multistart needs at least one start".into()));
    }
    let mut rng = seed::rng(opts.seed, 0);
    let random_starts: Vec<Vec<f64>> = (0..opts.restarts)
        .map(|_| space.sample_uniform(&mut rng).into_inner())
        .collect();

    let mut best: Option<MinimizeResult> = None;
    for start in starts.iter().chain(&random_starts) {
        let result = minimize(objective, space, start, opts)?;
        let better = match &best {
            None => true,
            Some(b) => result.f < b.f || (!b.f.is_finite() && result.f.is_finite()),
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one start"))
}
