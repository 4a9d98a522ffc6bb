use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};
use crate::{Error, Result};

/// AdamW hyperparameters. Defaults follow the reference AdamW settings with
/// a learning rate of 1e-4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamWConfig,
}

impl OptimizerState {
    pub fn new(len: usize, hyper: AdamWConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            hyper,
        }
    }
}

/// One decoupled-weight-decay Adam update. Gradients are validated before
/// anything is written, so a failed step leaves `params` and `state` intact.
pub fn adamw_step(params: &mut [f32], grads: &[f64], state: &mut OptimizerState, path: &str) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "{path}: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::training(format!("{path}[{i}]"), format!("non-finite gradient {}", grads[i])));
    }
    update(params, grads, state);
    Ok(())
}

fn update(params: &mut [f32], grads: &[f64], state: &mut OptimizerState) {
    let h = state.hyper;
    state.t += 1;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    // lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded into scalars
    let step = h.lr / bc1;
    let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
    let decay = 1.0 - h.lr * h.weight_decay;
    let (b1, b2) = (h.beta1, h.beta2);
    let (c1, c2) = (1.0 - b1, 1.0 - b2);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let mi = b1 * *m + c1 * g;
        let vi = b2 * *v + c2 * g * g;
        *m = mi;
        *v = vi;
        let theta = *p as f64 * decay - step * mi / (vi.sqrt() * inv_sqrt_bc2 + h.eps);
        *p = theta as f32;
    }
}

/// Per-tensor AdamW states for every layer of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpOptimizer {
    weights: Vec<OptimizerState>,
    bias: Vec<OptimizerState>,
}

impl MlpOptimizer {
    pub fn new(mlp: &Mlp, hyper: AdamWConfig) -> Self {
        Self {
            weights: mlp
                .layers()
                .iter()
                .map(|l| OptimizerState::new(l.weights().len(), hyper))
                .collect(),
            bias: mlp
                .layers()
                .iter()
                .map(|l| OptimizerState::new(l.bias().len(), hyper))
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.weights.first().map_or(0, |s| s.t)
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, path: &str) -> Result<()> {
        // validate everything first so an error never leaves a half-updated network
        if grads.layers.len() != mlp.layers().len() {
            return Err(Error::Shape(format!(
                "{path}: {} gradient layers for {} layers",
                grads.layers.len(),
                mlp.layers().len()
            )));
        }
        for (l, (g, layer)) in grads.layers.iter().zip(mlp.layers()).enumerate() {
            if g.weights.len() != layer.weights().len() || g.bias.len() != layer.bias().len() {
                return Err(Error::Shape(format!("{path}.layer{l}: gradient shape differs from parameters")));
            }
            for (name, vals) in [("weight", &g.weights), ("bias", &g.bias)] {
                if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
                    return Err(Error::training(
                        format!("{path}.layer{l}.{name}[{i}]"),
                        format!("non-finite gradient {}", vals[i]),
                    ));
                }
            }
        }
        for (l, (layer, g)) in mlp.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
            update(layer.weights_mut(), &g.weights, &mut self.weights[l]);
            update(layer.bias_mut(), &g.bias, &mut self.bias[l]);
        }
        Ok(())
    }
}
