use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activation::{gelu, gelu_derivative};
use super::{MlpConfig, Normalizer};
use crate::{Error, Result};

/// One affine layer; `weights` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weights.nrows(), self.weights.ncols())
    }
}

/// First and second moment estimates, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdamState {
    pub(crate) first: Vec<Layer>,
    pub(crate) second: Vec<Layer>,
    pub(crate) step: u64,
}

/// A GELU perceptron mapping normalized inputs to a normalized cost.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub(crate) config: MlpConfig,
    pub(crate) layers: Vec<Layer>,
    pub(crate) adam: AdamState,
}

fn layer_shapes(config: &MlpConfig, input_dim: usize) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(config.hidden_layers + 1);
    let mut fan_in = input_dim;
    for _ in 0..config.hidden_layers {
        shapes.push((fan_in, config.hidden_width));
        fan_in = config.hidden_width;
    }
    shapes.push((fan_in, 1));
    shapes
}

impl MlpNetwork {
    /// He initialization: weights `N(0, 2/fan_in)`, biases zero.
    pub fn he_init<R: Rng + ?Sized>(config: &MlpConfig, input_dim: usize, rng: &mut R) -> Self {
        let layers = layer_shapes(config, input_dim)
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("He standard deviation is finite and positive");
                Layer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::with_layers(config.clone(), layers)
    }

    /// A network whose every weight and bias is zero.
    pub fn zeros(config: &MlpConfig, input_dim: usize) -> Self {
        let layers = layer_shapes(config, input_dim)
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Self::with_layers(config.clone(), layers)
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        };
        let expected = layer_shapes(&config, first.weights.nrows());
        let actual: Vec<_> = layers.iter().map(|l| l.weights.dim()).collect();
        if expected != actual || layers.iter().any(|l| l.bias.len() != l.weights.ncols()) {
            return Err(Error::InvalidConfig(format!(
                "layer shapes {actual:?} do not match the configured topology {expected:?}"
            )));
        }
        Ok(Self::with_layers(config, layers))
    }

    fn with_layers(config: MlpConfig, layers: Vec<Layer>) -> Self {
        let adam = AdamState {
            first: layers.iter().map(Layer::zeros_like).collect(),
            second: layers.iter().map(Layer::zeros_like).collect(),
            step: 0,
        };
        Self {
            config,
            layers,
            adam,
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub(crate) fn weight_square_sum(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Network output for an already normalized input.
    pub fn forward_normalized(&self, x: ArrayView1<'_, f64>) -> f64 {
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut a = x.to_owned();
        for layer in hidden {
            a = a.dot(&layer.weights) + &layer.bias;
            a.mapv_inplace(gelu);
        }
        a.dot(&last.weights.column(0)) + last.bias[0]
    }

    /// Network outputs for a batch of normalized inputs, one per row.
    pub fn forward_batch_normalized(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut a = x.to_owned();
        for layer in hidden {
            a = a.dot(&layer.weights) + &layer.bias;
            a.mapv_inplace(gelu);
        }
        (a.dot(&last.weights) + &last.bias).remove_axis(Axis(1))
    }

    /// Predicted raw cost at `x`.
    pub fn forward(&self, norm: &Normalizer, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let mut xn = Array1::zeros(x.len());
        norm.normalize_input_into(x, xn.as_slice_mut().expect("contiguous"));
        Ok(norm.denormalize_cost(self.forward_normalized(xn.view())))
    }

    /// Gradient of [`forward`](Self::forward) with respect to the raw input.
    pub fn input_gradient(&self, norm: &Normalizer, x: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; x.len()];
        self.value_and_gradient(norm, x, &mut grad)?;
        Ok(grad)
    }

    /// Predicted raw cost at `x`, writing its input gradient into `grad`.
    pub fn value_and_gradient(&self, norm: &Normalizer, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_input(x.len())?;
        if grad.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: grad.len(),
            });
        }
        let mut xn = Array1::zeros(x.len());
        norm.normalize_input_into(x, xn.as_slice_mut().expect("contiguous"));

        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut pre_activations = Vec::with_capacity(hidden.len());
        let mut a = xn;
        for layer in hidden {
            let z = a.dot(&layer.weights) + &layer.bias;
            a = z.mapv(gelu);
            pre_activations.push(z);
        }
        let out = a.dot(&last.weights.column(0)) + last.bias[0];

        // Backpropagate d(out)/d(activation) down to the normalized input.
        let mut delta = last.weights.column(0).to_owned();
        for (layer, z) in hidden.iter().zip(&pre_activations).rev() {
            Zip::from(&mut delta).and(z).for_each(|d, &z| *d *= gelu_derivative(z));
            delta = layer.weights.dot(&delta);
        }
        for (((g, d), sd), _) in grad
            .iter_mut()
            .zip(&delta)
            .zip(&norm.input_std)
            .zip(x)
        {
            *g = d * norm.cost_std / sd;
        }
        Ok(norm.denormalize_cost(out))
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len == self.input_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: len,
            })
        }
    }

    pub fn checkpoint(&self, normalizer: &Normalizer) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            normalizer: normalizer.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    w: l.weights.outer_iter().map(|row| row.to_vec()).collect(),
                    b: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

/// Debugging snapshot of a network and the normalizer it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: MlpConfig,
    pub normalizer: Normalizer,
    pub layers: Vec<LayerRecord>,
}

/// `w[i][j]` is the weight from input `i` to output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Checkpoint {
    /// Rebuilds the network. Optimizer state starts fresh.
    pub fn into_network(self) -> Result<(MlpNetwork, Normalizer)> {
        let layers = self
            .layers
            .into_iter()
            .map(|rec| {
                let rows = rec.w.len();
                let cols = rec.w.first().map_or(0, Vec::len);
                let flat: Vec<f64> = rec.w.into_iter().flatten().collect();
                let weights = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| Error::InvalidConfig(format!("checkpoint layer: {e}")))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(rec.b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = MlpNetwork::from_layers(self.config, layers)?;
        Ok((net, self.normalizer))
    }
}
