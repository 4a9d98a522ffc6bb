use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Affine map `W·x + b` with `W` stored row-major as `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

/// Gradient accumulators for one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn zeros(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|g| *g = 0.0);
        self.bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::from_parts(in_dim, out_dim, vec![0.0; in_dim * out_dim], vec![0.0; out_dim])
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "dense layer dims must be > 0 (got {in_dim}→{out_dim})"
            )));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "dense layer {in_dim}→{out_dim} expects {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("dense layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    /// He-style uniform fan-in initialisation, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim)?;
        let limit = (6.0 / in_dim as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..limit) as f32;
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "dense layer expects input of length {}, got {}",
                self.in_dim,
                input.len()
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(input, &mut out);
        Ok(out)
    }

    pub(crate) fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = *b as f64 + dot(row, input);
        }
    }

    /// Pre-activation of output unit `unit`.
    pub(crate) fn unit_forward(&self, unit: usize, input: &[f64]) -> f64 {
        let row = &self.weights[unit * self.in_dim..(unit + 1) * self.in_dim];
        self.bias[unit] as f64 + dot(row, input)
    }

    /// Adds `delta` times input column `col` of the weights to `out`.
    pub(crate) fn add_column(&self, col: usize, delta: f64, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)) {
            *o += row[col] as f64 * delta;
        }
    }

    /// Accumulates `dL/dW`, `dL/db` into `grads` and returns `dL/dinput`.
    pub(crate) fn backward(&self, input: &[f64], grad_out: &[f64], grads: &mut DenseGrads) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            grads.bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * input[i];
                grad_in[i] += g * row[i] as f64;
            }
        }
        grad_in
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
fn dot(w: &[f32], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (wc, wr) = w.split_at(w.len() / 4 * 4);
    let (xc, xr) = x.split_at(wc.len());
    for (wq, xq) in wc.chunks_exact(4).zip(xc.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += wq[k] as f64 * xq[k];
        }
    }
    let mut tail = 0.0;
    for (a, b) in wr.iter().zip(xr) {
        tail += *a as f64 * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn dense_forward(layer: &DenseLayer, input: &[f64]) -> Result<Vec<f64>> {
    layer.forward(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    /// Which linear piece `z` falls on; `None` for activations without a kink.
    pub fn piece(self, z: f64) -> Option<bool> {
        match self {
            Activation::Identity => None,
            Activation::Relu => Some(z > 0.0),
            Activation::LeakyRelu { .. } => Some(z >= 0.0),
        }
    }
}

pub fn leaky_relu(input: &[f64], slope: f64) -> Vec<f64> {
    debug_assert!(slope > 0.0 && slope < 1.0, "leaky slope must lie in (0, 1)");
    let act = Activation::LeakyRelu { slope };
    input.iter().map(|&x| act.apply(x)).collect()
}

/// Inverted-dropout multipliers: 0 with probability `p`, otherwise `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub fn dropout_apply<R: Rng + ?Sized>(input: &[f64], p: f64, training: bool, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok(input.to_vec());
    }
    let mask = dropout_mask(input.len(), p, rng);
    Ok(input.iter().zip(&mask).map(|(x, m)| x * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let layer = DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(dense_forward(&layer, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let layer = DenseLayer::from_parts(4, 1, vec![0.0; 4], vec![3.0]).unwrap();
        assert_eq!(layer.forward(&[9.0, -1.0, 2.5, 7.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let layer = DenseLayer::from_parts(2, 1, vec![1.0, 1.0], vec![0.5]).unwrap();
        assert_eq!(layer.forward(&[2.0, 3.0]).unwrap(), vec![5.5]);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let layer = DenseLayer::zeros(3, 2).unwrap();
        assert!(matches!(layer.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(DenseLayer::zeros(0, 2), Err(Error::Config(_))));
        assert!(matches!(
            DenseLayer::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(&[2.0, -2.0], 0.01), vec![2.0, -0.02]);
        assert_eq!(leaky_relu(&[0.0], 0.01), vec![0.0]);
        assert_eq!(leaky_relu(&[-4.0], 0.5), vec![-2.0]);
    }

    #[test]
    fn dropout_inference_and_zero_p_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(dropout_apply(&x, 0.3, false, &mut rng).unwrap(), x);
        assert_eq!(dropout_apply(&x, 0.0, true, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_rejects_p_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(dropout_apply(&[1.0], 1.0, true, &mut rng), Err(Error::Parameter(_))));
        assert!(dropout_apply(&[1.0], -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = dropout_apply(&vec![1.0; 10_000], 0.5, true, &mut rng).unwrap();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((0.9..=1.1).contains(&mean), "mean {mean}");
        assert!(out.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn he_uniform_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::he_uniform(24, 8, &mut rng).unwrap();
        let limit = (6.0f64 / 24.0).sqrt() as f32;
        assert!(layer.weights().iter().all(|w| w.abs() <= limit));
        assert!(layer.bias().iter().all(|&b| b == 0.0));
    }
}
