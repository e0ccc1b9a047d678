//! Fully-connected ReLU classifier with a softmax head.
//!
//! The last hidden activation (the input to the final affine layer) is the
//! model's latent vector. A model without hidden layers is plain multinomial
//! logistic regression whose latent vector is the input itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{smoothed_target, softmax};
use super::matrix::RealMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `d_in × d_out`
    pub weights: RealMatrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: RealMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Dimension(format!(
                "bias length {} does not match layer width {}",
                bias.len(),
                weights.cols()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weights.vec_mul(x);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng>(input_dim: usize, hidden: &[usize], num_classes: usize, rng: &mut R) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut weights = RealMatrix::zeros(fan_in, fan_out);
                for v in weights.as_mut_slice() {
                    *v = rng.random_range(-limit..=limit);
                }
                DenseLayer {
                    weights,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(DenseLayer::output_dim)
            .collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.head().input_dim()
    }

    /// Final affine layer, mapping latent vectors to logits.
    pub fn head(&self) -> &DenseLayer {
        &self.layers[self.layers.len() - 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64], masks: Option<&DropoutMasks>) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has width {}, model expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let hidden = self.layers.len() - 1;
        if let Some(m) = masks {
            let widths = self.hidden_widths();
            let given: Vec<usize> = m.masks.iter().map(Vec::len).collect();
            if given != widths {
                return Err(Error::Dimension(format!(
                    "dropout masks have widths {given:?}, hidden layers are {widths:?}"
                )));
            }
        }

        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&activations[i]);
            if i < hidden {
                let mut a: Vec<f64> = z.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
                if let Some(m) = masks {
                    for (ai, mi) in a.iter_mut().zip(&m.masks[i]) {
                        *ai *= mi;
                    }
                }
                activations.push(a);
            }
            pre_activations.push(z);
        }
        let logits = pre_activations[hidden].clone();
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            pre_activations,
            activations,
            masks: masks.cloned(),
            logits,
            probs,
        })
    }

    /// Gradient of `CE(probs, smoothed target) + (λ/2)·Σ‖W‖²` with respect to
    /// every weight and bias, for the sample that produced `trace`.
    pub fn backward(&self, trace: &ForwardTrace, label: usize, l2_lambda: f64, smoothing: f64) -> GradientSet {
        let n = self.layers.len();
        let target = smoothed_target(self.num_classes(), label, smoothing);
        let mut delta: Vec<f64> = trace.probs.iter().zip(&target).map(|(p, y)| p - y).collect();
        let mut layers = vec![LayerGradient::default(); n];
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = &trace.activations[i];
            let mut gw = RealMatrix::zeros(layer.input_dim(), layer.output_dim());
            for (r, &x) in input.iter().enumerate() {
                let row = &mut gw.as_mut_slice()[r * layer.output_dim()..(r + 1) * layer.output_dim()];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g = x * d;
                }
            }
            if l2_lambda != 0.0 {
                for (g, w) in gw.as_mut_slice().iter_mut().zip(layer.weights.as_slice()) {
                    *g += l2_lambda * w;
                }
            }
            if i > 0 {
                let mut next = vec![0.0; layer.input_dim()];
                for (r, nr) in next.iter_mut().enumerate() {
                    let row = layer.weights.row(r);
                    *nr = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                }
                let pre = &trace.pre_activations[i - 1];
                for (j, nj) in next.iter_mut().enumerate() {
                    if pre[j] <= 0.0 {
                        *nj = 0.0;
                    } else if let Some(m) = &trace.masks {
                        *nj *= m.masks[i - 1][j];
                    }
                }
                layers[i] = LayerGradient { weights: gw, bias: delta };
                delta = next;
            } else {
                layers[i] = LayerGradient { weights: gw, bias: delta.clone() };
            }
        }
        GradientSet { layers }
    }

    /// Plain gradient descent: `θ ← θ − lr·g` on every parameter.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        grads.check_shape(self)?;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }
}

/// Per-hidden-layer inverted-dropout multipliers: `0` for dropped units,
/// `1/(1−rate)` for kept ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn ones(model: &MlpModel) -> Self {
        Self {
            masks: model.hidden_widths().into_iter().map(|w| vec![1.0; w]).collect(),
        }
    }

    pub fn sample<R: Rng>(model: &MlpModel, rate: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(Self::ones(model));
        }
        let keep = 1.0 / (1.0 - rate);
        let masks = model
            .hidden_widths()
            .into_iter()
            .map(|w| {
                (0..w)
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        Ok(Self { masks })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Affine outputs per layer; the last entry is the logits.
    pub pre_activations: Vec<Vec<f64>>,
    /// `activations[0]` is the input; `activations[i + 1]` is hidden layer
    /// `i` after ReLU and dropout.
    pub activations: Vec<Vec<f64>>,
    pub masks: Option<DropoutMasks>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn latent(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGradient {
    pub weights: RealMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: RealMatrix::zeros(l.input_dim(), l.output_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    fn check_shape(&self, model: &MlpModel) -> Result<()> {
        let ok = self.layers.len() == model.layers().len()
            && self.layers.iter().zip(model.layers()).all(|(g, l)| {
                g.weights.rows() == l.input_dim()
                    && g.weights.cols() == l.output_dim()
                    && g.bias.len() == l.output_dim()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("gradient shape does not match model".into()))
        }
    }

    /// Euclidean norm over the full flattened parameter vector.
    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }
}
