//! Fully connected network with relu hidden layers and a sigmoid output,
//! trained by full-batch gradient descent on binary cross-entropy.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_input_dim, check_training_data, targets, Predictor};
use crate::error::{Error, Result};
use crate::util::{dot, rng_from_seed, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden_layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Maximum number of full-batch epochs.
    pub max_iter: usize,
    pub learning_rate: f64,
    /// Training stops once the epoch-to-epoch loss change falls below this.
    pub tol: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_layer_sizes: vec![2],
            activation: Activation::Relu,
            max_iter: 200,
            learning_rate: 0.5,
            tol: 1e-6,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layer_sizes.is_empty() || self.hidden_layer_sizes.contains(&0) {
            return Err(Error::domain(
                "mlp needs at least one non-empty hidden layer",
            ));
        }
        if self.max_iter == 0
            || !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.tol > 0.0 && self.tol.is_finite())
        {
            return Err(Error::domain(
                "mlp max_iter, learning_rate and tol must be positive",
            ));
        }
        Ok(())
    }
}

/// Dense layer; `weights[o][i]` connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: self.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
            biases: vec![0.0; self.biases.len()],
        }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, input) + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
    pub seed: u64,
    /// Hidden layers followed by the single-unit output layer.
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_features: usize, params: &MlpParams, seed: u64) -> MlpModel {
        let mut rng = rng_from_seed(seed);
        let mut sizes = vec![n_features];
        sizes.extend(&params.hidden_layer_sizes);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: (0..fan_out)
                        .map(|_| {
                            (0..fan_in)
                                .map(|_| rng.random_range(-limit..=limit))
                                .collect()
                        })
                        .collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        MlpModel {
            params: params.clone(),
            seed,
            layers,
        }
    }

    pub fn n_features(&self) -> usize {
        self.layers
            .first()
            .and_then(|l| l.weights.first())
            .map_or(0, Vec::len)
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.params.validate()?;
        let bad = || Error::domain("mlp layer shapes are inconsistent");
        if self.layers.len() != self.params.hidden_layer_sizes.len() + 1 {
            return Err(bad());
        }
        let mut width = self.n_features();
        if width == 0 {
            return Err(bad());
        }
        for layer in &self.layers {
            if layer.weights.is_empty()
                || layer.weights.len() != layer.biases.len()
                || layer.weights.iter().any(|r| r.len() != width)
            {
                return Err(bad());
            }
            width = layer.weights.len();
        }
        if width != 1 {
            return Err(bad());
        }
        Ok(())
    }

    /// Output-layer pre-activation, plus each layer's post-activation output
    /// when `keep` is set (needed for backprop).
    fn forward(&self, x: &[f64], keep: Option<&mut Vec<Vec<f64>>>) -> f64 {
        let mut acts = keep;
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&current);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            if let Some(a) = acts.as_deref_mut() {
                a.push(current);
            }
            current = z;
        }
        current[0]
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, x: &[Vec<f64>], y: &[i8]) -> (f64, Vec<Layer>) {
        let t = targets(y);
        let n = x.len() as f64;
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut loss = 0.0;
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (row, &ti) in x.iter().zip(&t) {
            inputs.clear();
            let z = self.forward(row, Some(&mut inputs));
            loss += softplus(z) - ti * z;

            // delta holds dLoss/dz for the current layer's pre-activations.
            let mut delta = vec![(sigmoid(z) - ti) / n];
            for l in (0..self.layers.len()).rev() {
                let input = &inputs[l];
                let g = &mut grads[l];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[o] += d;
                    for (gw, a) in g.weights[o].iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                // Back through the weights, then the relu of the layer below.
                let w = &self.layers[l].weights;
                delta = (0..input.len())
                    .map(|i| {
                        if input[i] > 0.0 {
                            delta.iter().enumerate().map(|(o, d)| d * w[o][i]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        (loss / n, grads)
    }

    pub fn loss(&self, x: &[Vec<f64>], y: &[i8]) -> f64 {
        let t = targets(y);
        x.iter()
            .zip(&t)
            .map(|(row, &ti)| {
                let z = self.forward(row, None);
                softplus(z) - ti * z
            })
            .sum::<f64>()
            / x.len() as f64
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for w in row.iter_mut() {
                    *w = it.next().expect("flat parameter vector too short");
                }
            }
            for b in &mut layer.biases {
                *b = it.next().expect("flat parameter vector too short");
            }
        }
    }

    fn step(&mut self, grads: &[Layer], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            for (row, grow) in layer.weights.iter_mut().zip(&g.weights) {
                for (w, gw) in row.iter_mut().zip(grow) {
                    *w -= lr * gw;
                }
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * gb;
            }
        }
    }
}

pub fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().flatten().chain(&l.biases).copied())
        .collect()
}

impl Predictor for MlpModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_input_dim(x, self.n_features())?;
        Ok(sigmoid(self.forward(x, None)))
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

pub fn fit(x: &[Vec<f64>], y: &[i8], params: &MlpParams, seed: u64) -> Result<MlpModel> {
    params.validate()?;
    let dim = check_training_data(x, y)?;
    let mut model = MlpModel::init(dim, params, seed);
    let mut prev = f64::INFINITY;
    for _ in 0..params.max_iter {
        let (loss, grads) = model.loss_and_gradient(x, y);
        if (prev - loss).abs() < params.tol {
            break;
        }
        prev = loss;
        model.step(&grads, params.learning_rate);
    }
    Ok(model)
}
