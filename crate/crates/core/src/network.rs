//! Fully connected binary classifier: hidden layers with a shared
//! activation, one sigmoid output unit, binary cross-entropy loss with an L2
//! penalty on weights (biases excluded).

use serde::{Deserialize, Serialize};

use crate::hyper::{sigmoid, Activation, HyperparameterSetting, WeightInit};
use crate::rng::{mix, SplitMix64};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-12;

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize)]
pub enum NetworkError {
    #[error("input width {found} does not match network input width {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// One dense layer. `weights` is row-major `outputs x inputs`: row `j` holds
/// the incoming weights of unit `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (j, (o, b)) in out.iter_mut().zip(&self.bias).enumerate() {
            let row = &self.weights[j * self.inputs..(j + 1) * self.inputs];
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub layers: Vec<DenseLayer>,
}

/// Gradient of the mean batch loss, shaped like the network.
pub type Gradients = NetworkWeights;

/// A minibatch view: `features` is row-major with `labels.len()` rows.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [f64]) -> Self {
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Inverted dropout on hidden activations: kept units are scaled by
/// `1 / (1 - rate)` so inference needs no rescaling.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    pub rng: SplitMix64,
}

impl Dropout {
    #[inline]
    fn mask(&mut self) -> f64 {
        if self.rng.next_f64() < self.rate {
            0.0
        } else {
            1.0 / (1.0 - self.rate)
        }
    }
}

/// Uniform initialization bound for a layer.
pub fn init_bound(scheme: WeightInit, fan_in: usize, fan_out: usize) -> f64 {
    match scheme {
        WeightInit::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        WeightInit::HeUniform => (6.0 / fan_in as f64).sqrt(),
    }
}

/// Draw initial weights. Biases start at zero; weights are uniform in
/// `[-bound, bound)`, layer by layer in row-major order from one stream.
pub fn init_weights(setting: &HyperparameterSetting, input_width: usize, seed: u64) -> NetworkWeights {
    let mut rng = SplitMix64::new(mix(seed, INIT_STREAM, 0));
    let widths = setting.layer_widths(input_width);
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = init_bound(setting.weight_init, fan_in, fan_out);
            let mut layer = DenseLayer::zeros(fan_in, fan_out);
            for v in &mut layer.weights {
                *v = rng.uniform(-bound, bound);
            }
            layer
        })
        .collect();
    NetworkWeights { layers }
}

/// Binary cross-entropy of one prediction plus `(l2_lambda / 2) * sum(w^2)`.
pub fn loss(p: f64, y: f64, weights: &NetworkWeights, l2_lambda: f64) -> f64 {
    bce(p, y) + l2_penalty(weights, l2_lambda)
}

#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn l2_penalty(weights: &NetworkWeights, l2_lambda: f64) -> f64 {
    if l2_lambda == 0.0 {
        return 0.0;
    }
    let sq: f64 = weights
        .layers
        .iter()
        .flat_map(|l| l.weights.iter())
        .map(|w| w * w)
        .sum();
    0.5 * l2_lambda * sq
}

/// Per-layer activation buffers reused across samples.
struct Scratch {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    mask: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(w: &NetworkWeights) -> Self {
        let sizes: Vec<usize> = w.layers.iter().map(|l| l.outputs).collect();
        let make = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            pre: make(),
            post: make(),
            mask: make(),
            delta: make(),
        }
    }
}

impl NetworkWeights {
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    /// `(inputs, outputs)` of each layer.
    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.inputs, l.outputs)).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Check that layer dimensions chain from the input to a single output.
    pub fn is_well_formed(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self.layers.last().is_some_and(|l| l.outputs == 1)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs)
    }

    fn check_width(&self, found: usize) -> Result<(), NetworkError> {
        let expected = self.input_width();
        if expected != found {
            return Err(NetworkError::DimensionMismatch { expected, found });
        }
        Ok(())
    }

    /// Predicted probability of class 1 (inference, no dropout).
    pub fn forward(&self, x: &[f64], activation: Activation) -> Result<f64, NetworkError> {
        self.check_width(x.len())?;
        let mut scratch = Scratch::new(self);
        Ok(self.forward_into(x, activation, None, &mut scratch))
    }

    /// Forward pass with dropout applied to hidden units when `dropout` is
    /// given and its rate is positive.
    pub fn forward_train(
        &self,
        x: &[f64],
        activation: Activation,
        dropout: Option<&mut Dropout>,
    ) -> Result<f64, NetworkError> {
        self.check_width(x.len())?;
        let mut scratch = Scratch::new(self);
        Ok(self.forward_into(x, activation, dropout, &mut scratch))
    }

    /// Scores for every row of a row-major matrix.
    pub fn predict_rows(&self, features: &[f64], activation: Activation) -> Result<Vec<f64>, NetworkError> {
        let width = self.input_width();
        if width == 0 || !features.len().is_multiple_of(width) {
            return Err(NetworkError::DimensionMismatch {
                expected: width,
                found: features.len(),
            });
        }
        let mut scratch = Scratch::new(self);
        Ok(features
            .chunks_exact(width)
            .map(|x| self.forward_into(x, activation, None, &mut scratch))
            .collect())
    }

    fn forward_into(
        &self,
        x: &[f64],
        activation: Activation,
        mut dropout: Option<&mut Dropout>,
        s: &mut Scratch,
    ) -> f64 {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = s.post.split_at_mut(l);
            let input = if l == 0 { x } else { &done[l - 1] };
            layer.affine(input, &mut s.pre[l]);
            let out = &mut rest[0];
            if l == last {
                out[0] = sigmoid(s.pre[l][0]);
                continue;
            }
            for ((a, &z), m) in out.iter_mut().zip(&s.pre[l]).zip(s.mask[l].iter_mut()) {
                *m = match dropout.as_deref_mut() {
                    Some(d) if d.rate > 0.0 => d.mask(),
                    _ => 1.0,
                };
                *a = activation.apply(z) * *m;
            }
        }
        s.post[last][0]
    }

    /// Exact gradient of the mean batch loss (cross-entropy plus L2 on
    /// weights), without dropout.
    pub fn gradients(
        &self,
        batch: Batch<'_>,
        activation: Activation,
        l2_lambda: f64,
    ) -> Result<Gradients, NetworkError> {
        let mut grads = self.zeros_like();
        self.accumulate_gradients(batch, activation, l2_lambda, None, &mut grads)?;
        Ok(grads)
    }

    /// Writes the mean-loss gradient into `grads` (overwriting it) and
    /// returns the mean batch loss.
    pub(crate) fn accumulate_gradients(
        &self,
        batch: Batch<'_>,
        activation: Activation,
        l2_lambda: f64,
        mut dropout: Option<&mut Dropout>,
        grads: &mut Gradients,
    ) -> Result<f64, NetworkError> {
        let width = self.input_width();
        if batch.features.len() != batch.len() * width {
            return Err(NetworkError::DimensionMismatch {
                expected: batch.len() * width,
                found: batch.features.len(),
            });
        }
        for g in &mut grads.layers {
            g.weights.fill(0.0);
            g.bias.fill(0.0);
        }
        let n = batch.len();
        if n == 0 {
            return Ok(l2_penalty(self, l2_lambda));
        }
        let scale = 1.0 / n as f64;
        let last = self.layers.len() - 1;
        let mut s = Scratch::new(self);
        let mut total = 0.0;

        for (x, &y) in batch.features.chunks_exact(width).zip(batch.labels) {
            let p = self.forward_into(x, activation, dropout.as_deref_mut(), &mut s);
            total += bce(p, y);

            s.delta[last][0] = (p - y) * scale;
            for l in (0..=last).rev() {
                if l < last {
                    // delta_l = (W_{l+1}^T delta_{l+1}) * f'(z_l) * mask_l
                    let (lo, hi) = s.delta.split_at_mut(l + 1);
                    let next = &self.layers[l + 1];
                    let upstream = &hi[0];
                    for (i, d) in lo[l].iter_mut().enumerate() {
                        let back: f64 = upstream
                            .iter()
                            .enumerate()
                            .map(|(j, u)| u * next.weights[j * next.inputs + i])
                            .sum();
                        let m = s.mask[l][i];
                        let a = if m == 0.0 { 0.0 } else { s.post[l][i] / m };
                        *d = back * activation.derivative(s.pre[l][i], a) * m;
                    }
                }
                let input = if l == 0 { x } else { &s.post[l - 1] };
                let g = &mut grads.layers[l];
                for (j, &d) in s.delta[l].iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[j] += d;
                    let row = &mut g.weights[j * g.inputs..(j + 1) * g.inputs];
                    for (gw, &v) in row.iter_mut().zip(input) {
                        *gw += d * v;
                    }
                }
            }
        }

        if l2_lambda != 0.0 {
            for (g, w) in grads.layers.iter_mut().zip(&self.layers) {
                for (gw, &wv) in g.weights.iter_mut().zip(&w.weights) {
                    *gw += l2_lambda * wv;
                }
            }
        }
        Ok(total * scale + l2_penalty(self, l2_lambda))
    }

    /// Mean batch loss without dropout.
    pub fn batch_loss(&self, batch: Batch<'_>, activation: Activation, l2_lambda: f64) -> Result<f64, NetworkError> {
        let probs = self.predict_rows(batch.features, activation)?;
        let mean = probs
            .iter()
            .zip(batch.labels)
            .map(|(&p, &y)| bce(p, y))
            .sum::<f64>()
            / batch.len().max(1) as f64;
        Ok(mean + l2_penalty(self, l2_lambda))
    }
}
