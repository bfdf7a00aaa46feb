//! Dense layers, the feed-forward network and its reverse-mode gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    /// `2 * sigmoid(z)`, codomain `(0, 2)`.
    ScaledSigmoid2,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::ScaledSigmoid2 => 2.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::ScaledSigmoid2 => y * (1.0 - 0.5 * y),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::ScaledSigmoid2 => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            2 => Some(Activation::ScaledSigmoid2),
            _ => None,
        }
    }
}

/// Draws a `fan_in x fan_out` matrix from `normal(0, sqrt(2 / fan_in))`.
pub fn he_normal_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidShape(format!(
            "he_normal_init needs positive dims, got ({fan_in}, {fan_out})"
        )));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
        .map_err(|e| Error::InvalidShape(e.to_string()))?;
    Ok(Matrix::from_fn(fan_in, fan_out, |_, _| normal.sample(rng)))
}

/// `y = activation(x W + b)`, optionally followed by inverted dropout in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    dropout_rate: f64,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation, dropout_rate: f64) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape("DenseLayer::new", weights.cols(), bias.len()));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidShape("dense layer with a zero dimension".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        if let Some(index) = bias.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                context: "bias".into(),
                index,
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
            dropout_rate,
        })
    }

    pub fn he_normal<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weights = he_normal_init(input, output, rng)?;
        Self::new(weights, vec![0.0; output], activation, dropout_rate)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    fn parameter_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}

/// Per-layer record of one forward pass.
#[derive(Debug, Clone)]
struct LayerTrace {
    input: Matrix,
    pre_activation: Matrix,
    activated: Matrix,
    /// Inverted-dropout multipliers, present only when dropout fired.
    dropout: Option<Vec<f64>>,
}

/// Everything `backward` needs from a forward call.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    /// Flattened in the same order as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

/// Feed-forward network: an ordered chain of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidShape("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "Mlp::new",
                    format!("layer {} input {}", i + 1, pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// He-initialized network `input -> hidden... -> output`. Dropout applies to
    /// hidden layers only.
    pub fn he_normal<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &width in hidden {
            layers.push(DenseLayer::he_normal(fan_in, width, hidden_activation, dropout_rate, rng)?);
            fan_in = width;
        }
        layers.push(DenseLayer::he_normal(fan_in, output, output_activation, 0.0, rng)?);
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Output widths of every layer but the last.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(DenseLayer::output_dim)
            .collect()
    }

    /// Parameter version; bumped on every mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// All weights and biases, layer by layer (weights row-major, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape("set_parameters", self.parameter_count(), values.len()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weights.as_mut_slice();
            w.copy_from_slice(&values[offset..offset + w.len()]);
            offset += w.len();
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&values[offset..offset + b]);
            offset += b;
        }
        self.version += 1;
        Ok(())
    }

    /// Mutable view of each layer's (weights, bias) for optimizers.
    pub(crate) fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.weights.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    /// Eval-mode forward pass without a tape.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        let mut x = self.check_input(batch)?.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            x = z;
        }
        Ok(x)
    }

    /// Forward pass recording a tape. Dropout fires only in `train_mode`.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &Matrix, train_mode: bool, rng: &mut R) -> Result<(Matrix, Tape)> {
        let mut x = self.check_input(batch)?.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut a = z.clone();
            a.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = layer.activation.apply(*v));
            let activated = a.clone();
            let dropout = if train_mode && layer.dropout_rate > 0.0 {
                let keep = 1.0 - layer.dropout_rate;
                let scale = 1.0 / keep;
                let multipliers: Vec<f64> = (0..a.as_slice().len())
                    .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect();
                a.as_mut_slice()
                    .iter_mut()
                    .zip(&multipliers)
                    .for_each(|(v, m)| *v *= m);
                Some(multipliers)
            } else {
                None
            };
            traces.push(LayerTrace {
                input: x,
                pre_activation: z,
                activated,
                dropout,
            });
            x = a;
        }
        Ok((
            x,
            Tape {
                version: self.version,
                layers: traces,
            },
        ))
    }

    /// Reverse pass. Returns parameter gradients and the gradient with respect
    /// to the network input.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        if tape.version != self.version || tape.layers.len() != self.layers.len() {
            return Err(Error::StaleTape {
                recorded: tape.version,
                current: self.version,
            });
        }
        let last = &tape.layers[tape.layers.len() - 1];
        if output_grad.shape() != last.pre_activation.shape() {
            return Err(Error::shape(
                "backward",
                format!("{:?}", last.pre_activation.shape()),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let mut grad = output_grad.clone();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (layer, trace) in self.layers.iter().zip(&tape.layers).rev() {
            if let Some(multipliers) = &trace.dropout {
                grad.as_mut_slice()
                    .iter_mut()
                    .zip(multipliers)
                    .for_each(|(g, m)| *g *= m);
            }
            for ((g, z), y) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(trace.pre_activation.as_slice())
                .zip(trace.activated.as_slice())
            {
                *g *= layer.activation.derivative(*z, *y);
            }
            let weights = trace.input.t_matmul(&grad)?;
            let bias = grad.column_sums();
            let input_grad = grad.matmul_t(&layer.weights)?;
            layer_grads.push(LayerGradient { weights, bias });
            grad = input_grad;
        }
        layer_grads.reverse();
        Ok((Gradients { layers: layer_grads }, grad))
    }

    fn check_input<'a>(&self, batch: &'a Matrix) -> Result<&'a Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("forward", self.input_dim(), batch.cols()));
        }
        Ok(batch)
    }
}

/// Mean of squared elementwise differences.
pub fn l2_loss(prediction: &Matrix, target: &Matrix) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "l2_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", prediction.shape()),
        ));
    }
    let n = prediction.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = prediction
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n as f64)
}

/// Gradient of [`l2_loss`] with respect to `prediction`.
pub fn l2_loss_grad(prediction: &Matrix, target: &Matrix) -> Result<Matrix> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "l2_loss_grad",
            format!("{:?}", target.shape()),
            format!("{:?}", prediction.shape()),
        ));
    }
    let scale = 2.0 / prediction.as_slice().len().max(1) as f64;
    let values = prediction
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Matrix::new(prediction.rows(), prediction.cols(), values)
}
