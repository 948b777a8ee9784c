use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::std_normal_cdf;
use super::network::{Layer, MlpNetwork};
use super::Normalizer;
use crate::observation::Observation;
use crate::{Error, Result};

/// Loss bookkeeping of one call to [`MlpNetwork::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// The early-stopping rule: keep training only if the iteration brought the
/// loss below `ratio` times its value at the iteration's start.
pub fn continue_training(start_loss: f64, end_loss: f64, ratio: f64) -> bool {
    end_loss < ratio * start_loss
}

/// Drives training iterations until the rule in [`continue_training`] says
/// stop or `max_iterations` is reached. `iteration` runs one iteration and
/// returns the loss afterwards.
pub fn run_early_stopping<F>(
    initial_loss: f64,
    ratio: f64,
    max_iterations: usize,
    mut iteration: F,
) -> Result<TrainReport>
where
    F: FnMut() -> Result<f64>,
{
    if !initial_loss.is_finite() {
        return Err(Error::TrainingDiverged);
    }
    let mut loss = initial_loss;
    let mut iterations = 0;
    while iterations < max_iterations {
        let end = iteration()?;
        iterations += 1;
        if !end.is_finite() {
            return Err(Error::TrainingDiverged);
        }
        let again = continue_training(loss, end, ratio);
        loss = end;
        if !again {
            break;
        }
    }
    Ok(TrainReport {
        iterations,
        initial_loss,
        final_loss: loss,
    })
}

/// Normalized design matrix and targets.
struct TrainingSet {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl TrainingSet {
    fn new(norm: &Normalizer, observations: &[Observation]) -> Result<Self> {
        let dim = norm.dim();
        let mut x = Array2::zeros((observations.len(), dim));
        let mut y = Array1::zeros(observations.len());
        for ((mut row, target), obs) in x.outer_iter_mut().zip(&mut y).zip(observations) {
            if obs.params.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: obs.params.len(),
                });
            }
            norm.normalize_input_into(&obs.params, row.as_slice_mut().expect("row-major"));
            *target = norm.normalize_cost(obs.raw_cost);
        }
        Ok(Self { x, y })
    }
}

/// Forward-pass intermediates of one hidden layer.
struct HiddenCache {
    pre: Array2<f64>,
    cdf: Array2<f64>,
    act: Array2<f64>,
}

impl MlpNetwork {
    /// Mean squared error on normalized costs plus the L2 weight penalty.
    pub fn loss(&self, norm: &Normalizer, observations: &[Observation]) -> Result<f64> {
        let set = TrainingSet::new(norm, observations)?;
        Ok(self.loss_on(&set))
    }

    fn loss_on(&self, set: &TrainingSet) -> f64 {
        let m = set.y.len();
        if m == 0 {
            return self.config.l2_coefficient * self.weight_square_sum();
        }
        const CHUNK: usize = 512;
        let mut sse = 0.0;
        for start in (0..m).step_by(CHUNK) {
            let end = (start + CHUNK).min(m);
            let pred = self.forward_batch_normalized(set.x.slice(ndarray::s![start..end, ..]));
            sse += pred
                .iter()
                .zip(set.y.slice(ndarray::s![start..end]))
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>();
        }
        sse / m as f64 + self.config.l2_coefficient * self.weight_square_sum()
    }

    /// Trains on every observation with shuffled mini-batch Adam under the
    /// iteration-wise early-stopping rule.
    ///
    /// On divergence the network is restored to its state before the call.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        norm: &Normalizer,
        observations: &[Observation],
        rng: &mut R,
    ) -> Result<TrainReport> {
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let set = TrainingSet::new(norm, observations)?;
        let snapshot = self.clone();
        let initial = self.loss_on(&set);
        let config = self.config.clone();
        let mut order: Vec<usize> = (0..set.y.len()).collect();

        let result = run_early_stopping(
            initial,
            config.continue_threshold_ratio,
            config.max_training_iterations,
            || {
                for _ in 0..config.epochs_per_iteration {
                    order.shuffle(rng);
                    for batch in order.chunks(config.batch_size) {
                        let xb = set.x.select(Axis(0), batch);
                        let yb = set.y.select(Axis(0), batch);
                        self.adam_step(xb.view(), yb.view());
                    }
                }
                Ok(self.loss_on(&set))
            },
        );
        match result {
            Ok(report) if self.is_finite() => Ok(report),
            _ => {
                *self = snapshot;
                Err(Error::TrainingDiverged)
            }
        }
    }

    /// One Adam update on a mini-batch of normalized data.
    fn adam_step(&mut self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) {
        let grads = self.batch_gradients(x, y);
        let c = &self.config;
        let (beta1, beta2, eps, step) = (c.adam_beta1, c.adam_beta2, c.adam_epsilon, c.adam_step);
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= step * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, first), second), grad) in self
            .layers
            .iter_mut()
            .zip(&mut self.adam.first)
            .zip(&mut self.adam.second)
            .zip(&grads)
        {
            Zip::from(&mut layer.weights)
                .and(&mut first.weights)
                .and(&mut second.weights)
                .and(&grad.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut first.bias)
                .and(&mut second.bias)
                .and(&grad.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }

    /// Gradients of the batch loss `mean((f(x) - y)^2) + λ Σ w²` per layer.
    fn batch_gradients(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Vec<Layer> {
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut caches: Vec<HiddenCache> = Vec::with_capacity(hidden.len());
        for layer in hidden {
            let input = caches.last().map_or(x, |c| c.act.view());
            let pre = input.dot(&layer.weights) + &layer.bias;
            let cdf = pre.mapv(std_normal_cdf);
            let act = &pre * &cdf;
            caches.push(HiddenCache { pre, cdf, act });
        }
        let top_input = caches.last().map_or(x, |c| c.act.view());
        let out = top_input.dot(&last.weights) + &last.bias;

        let scale = 2.0 / y.len() as f64;
        let mut delta = out;
        Zip::from(delta.column_mut(0))
            .and(&y)
            .for_each(|d, &t| *d = scale * (*d - t));

        let l2 = 2.0 * self.config.l2_coefficient;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = if l == 0 { x } else { caches[l - 1].act.view() };
            let mut weights = input.t().dot(&delta);
            weights.scaled_add(l2, &layer.weights);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weights, bias });
            if l > 0 {
                let cache = &caches[l - 1];
                let mut back = delta.dot(&layer.weights.t());
                Zip::from(&mut back)
                    .and(&cache.pre)
                    .and(&cache.cdf)
                    .for_each(|d, &z, &cdf| {
                        let pdf = (-0.5 * z * z).exp() * std::f64::consts::FRAC_1_SQRT_2
                            / std::f64::consts::PI.sqrt();
                        *d *= cdf + z * pdf;
                    });
                delta = back;
            }
        }
        grads.reverse();
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::MlpConfig;
    use crate::observation::Source;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_rule_on_both_sides() {
        // threshold = 0.8 * 1.0
        assert!(continue_training(1.0, 0.75, 0.8));
        assert!(!continue_training(1.0, 0.85, 0.8));
        assert!(!continue_training(1.0, 0.8, 0.8));
    }

    #[test]
    fn constructed_runs_continue_then_stop() {
        let mut losses = [0.75, 0.5, 0.45, 0.1].into_iter();
        let report = run_early_stopping(1.0, 0.8, 50, || Ok(losses.next().unwrap())).unwrap();
        // 0.75 < 0.8, 0.5 < 0.6, 0.45 >= 0.4 -> stop after the third.
        assert_eq!(report.iterations, 3);
        assert_eq!(report.final_loss, 0.45);

        let report = run_early_stopping(1.0, 0.8, 50, || Ok(0.85)).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.final_loss, 0.85);
    }

    #[test]
    fn iteration_cap_always_terminates() {
        let mut loss = 1.0;
        let report = run_early_stopping(loss, 0.8, 7, || {
            loss *= 0.1;
            Ok(loss)
        })
        .unwrap();
        assert_eq!(report.iterations, 7);
    }

    #[test]
    fn non_finite_loss_aborts() {
        assert!(matches!(
            run_early_stopping(1.0, 0.8, 5, || Ok(f64::NAN)),
            Err(Error::TrainingDiverged)
        ));
        assert!(matches!(
            run_early_stopping(f64::INFINITY, 0.8, 5, || Ok(0.0)),
            Err(Error::TrainingDiverged)
        ));
    }

    fn quadratic_data(points: usize, dim: usize, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..points)
            .map(|i| {
                let params: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let cost = params.iter().map(|v| (v - 0.2) * (v - 0.2)).sum();
                Observation {
                    run_index: i as u64,
                    source: Source::InitDe,
                    params,
                    raw_cost: cost,
                    scaled_cost: 0.0,
                    bad: false,
                    wall_time: 0.0,
                }
            })
            .collect()
    }

    fn small_config() -> MlpConfig {
        MlpConfig {
            hidden_layers: 2,
            hidden_width: 16,
            epochs_per_iteration: 20,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let config = MlpConfig {
            l2_coefficient: 1e-3,
            ..small_config()
        };
        let data = quadratic_data(8, 3, 4);
        let norm = Normalizer::fit(&data).unwrap();
        let set = TrainingSet::new(&norm, &data).unwrap();
        let net = MlpNetwork::he_init(&config, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let grads = net.batch_gradients(set.x.view(), set.y.view());
        let h = 1e-6;
        for (l, g) in grads.iter().enumerate() {
            for ((i, j), &analytic) in g.weights.indexed_iter().step_by(7) {
                let mut plus = net.clone();
                plus.layers[l].weights[[i, j]] += h;
                let mut minus = net.clone();
                minus.layers[l].weights[[i, j]] -= h;
                let fd = (plus.loss_on(&set) - minus.loss_on(&set)) / (2.0 * h);
                assert!((analytic - fd).abs() < 1e-6 * (1.0 + fd.abs()), "layer {l} w[{i},{j}]");
            }
            for (j, &analytic) in g.bias.iter().enumerate() {
                let mut plus = net.clone();
                plus.layers[l].bias[j] += h;
                let mut minus = net.clone();
                minus.layers[l].bias[j] -= h;
                let fd = (plus.loss_on(&set) - minus.loss_on(&set)) / (2.0 * h);
                assert!((analytic - fd).abs() < 1e-6 * (1.0 + fd.abs()), "layer {l} b[{j}]");
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_quadratic() {
        let data = quadratic_data(20, 2, 1);
        let norm = Normalizer::fit(&data).unwrap();
        let config = MlpConfig::default();
        let mut net = MlpNetwork::he_init(&config, 2, &mut ChaCha8Rng::seed_from_u64(8));
        let report = net.train(&norm, &data, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(report.final_loss < report.initial_loss);
        assert!(report.iterations >= 1 && report.iterations <= config.max_training_iterations);
        assert!(net.is_finite());
        assert_eq!(report.final_loss, net.loss(&norm, &data).unwrap());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = quadratic_data(30, 3, 2);
        let norm = Normalizer::fit(&data).unwrap();
        let run = || {
            let mut net = MlpNetwork::he_init(&small_config(), 3, &mut ChaCha8Rng::seed_from_u64(1));
            net.train(&norm, &data, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_rolls_back() {
        let data = quadratic_data(10, 2, 3);
        let norm = Normalizer::fit(&data).unwrap();
        let config = MlpConfig {
            adam_step: 1e300,
            ..small_config()
        };
        let mut net = MlpNetwork::he_init(&config, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let before = net.clone();
        let err = net.train(&norm, &data, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(err, Err(Error::TrainingDiverged)));
        assert_eq!(net, before);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut net = MlpNetwork::zeros(&small_config(), 2);
        assert!(matches!(
            net.train(&Normalizer::identity(2), &[], &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyDataset)
        ));
    }
}
