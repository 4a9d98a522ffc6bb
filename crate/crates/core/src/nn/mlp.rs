use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{dropout_mask, Activation, DenseGrads, DenseLayer};
use crate::{Error, Result};

/// Activation and dropout applied after one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub activation: Activation,
    pub dropout: f64,
}

/// A stack of dense layers, each followed by its [`LayerSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    specs: Vec<LayerSpec>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    pub output: Vec<f64>,
}

impl MlpTrace {
    /// Which linear piece each kinked unit sits on, layer by layer.
    pub fn pattern(&self, specs: &[LayerSpec]) -> Vec<bool> {
        pattern_of(&self.pre, specs)
    }
}

fn pattern_of(pre: &[Vec<f64>], specs: &[LayerSpec]) -> Vec<bool> {
    let mut out = Vec::new();
    for (z, spec) in pre.iter().zip(specs) {
        out.extend(z.iter().filter_map(|&v| spec.activation.piece(v)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

impl MlpGrads {
    pub fn clear(&mut self) {
        self.layers.iter_mut().for_each(DenseGrads::clear);
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().for_each(|v| *v *= factor);
            g.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

/// Position of a flat parameter index inside an [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLocation {
    pub layer: usize,
    pub is_bias: bool,
    pub offset: usize,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, specs: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() || layers.len() != specs.len() {
            return Err(Error::Config(format!(
                "mlp needs one spec per layer ({} layers, {} specs)",
                layers.len(),
                specs.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "consecutive layers {}→{} and {}→{} do not chain",
                    pair[0].in_dim(),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                    pair[1].out_dim()
                )));
            }
        }
        for spec in &specs {
            if !(0.0..1.0).contains(&spec.dropout) {
                return Err(Error::Parameter(format!(
                    "dropout probability must lie in [0, 1), got {}",
                    spec.dropout
                )));
            }
        }
        Ok(Self { layers, specs })
    }

    /// He-uniform initialised stack with widths `dims[0] → dims[1] → …`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("mlp needs at least an input and an output width".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::he_uniform(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, specs)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Output widths of each layer.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(DenseLayer::out_dim).collect()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self.layers.iter().map(DenseGrads::zeros).collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "mlp expects input of length {}, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Inference pass: dropout disabled.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for (layer, spec) in self.layers.iter().zip(&self.specs) {
            let mut z = vec![0.0; layer.out_dim()];
            layer.forward_into(&x, &mut z);
            z.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
            x = z;
        }
        Ok(x)
    }

    /// Forward pass that records everything needed by [`Mlp::backward`].
    /// With `rng = None` dropout is disabled.
    pub fn forward_trace<R: Rng + ?Sized>(&self, input: &[f64], mut rng: Option<&mut R>) -> Result<MlpTrace> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (layer, spec) in self.layers.iter().zip(&self.specs) {
            let mut z = vec![0.0; layer.out_dim()];
            layer.forward_into(&x, &mut z);
            let mut h: Vec<f64> = z.iter().map(|&v| spec.activation.apply(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if spec.dropout > 0.0 => {
                    let m = dropout_mask(h.len(), spec.dropout, r);
                    h.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            inputs.push(std::mem::replace(&mut x, h));
            pre.push(z);
            masks.push(mask);
        }
        Ok(MlpTrace {
            inputs,
            pre,
            masks,
            output: x,
        })
    }

    /// Inference pass starting at layer `start` with `input` as that layer's input.
    /// Returns the output and the kink pattern of layers `start..`.
    pub fn forward_from(&self, start: usize, input: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let mut x = input.to_vec();
        let mut pattern = Vec::new();
        for (layer, spec) in self.layers[start..].iter().zip(&self.specs[start..]) {
            let mut z = vec![0.0; layer.out_dim()];
            layer.forward_into(&x, &mut z);
            pattern.extend(z.iter().filter_map(|&v| spec.activation.piece(v)));
            z.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
            x = z;
        }
        (x, pattern)
    }

    /// Output and kink pattern after parameter `idx` changed, given a dropout-free
    /// `trace` recorded before the change. Only the touched unit is recomputed in
    /// its own layer and the next layer takes a rank-one update.
    pub fn forward_after_param_change(&self, trace: &MlpTrace, idx: usize) -> (Vec<f64>, Vec<bool>) {
        let loc = self.locate(idx);
        let (l, layer) = (loc.layer, &self.layers[loc.layer]);
        let unit = if loc.is_bias { loc.offset } else { loc.offset / layer.in_dim() };
        let mut z = trace.pre[l].clone();
        z[unit] = layer.unit_forward(unit, &trace.inputs[l]);
        let mut pattern = pattern_of(&trace.pre[..l], &self.specs[..l]);
        pattern.extend(z.iter().filter_map(|&v| self.specs[l].activation.piece(v)));
        let h = self.specs[l].activation.apply(z[unit]);
        if l + 1 == self.layers.len() {
            let mut out = trace.output.clone();
            out[unit] = h;
            return (out, pattern);
        }
        let (out, tail) = self.resume_with_input_change(trace, l + 1, unit, h);
        pattern.extend(tail);
        (out, pattern)
    }

    /// Output and kink pattern when coordinate `unit` of the network input
    /// recorded in a dropout-free `trace` takes `value`.
    pub fn forward_after_input_change(&self, trace: &MlpTrace, unit: usize, value: f64) -> (Vec<f64>, Vec<bool>) {
        self.resume_with_input_change(trace, 0, unit, value)
    }

    fn resume_with_input_change(&self, trace: &MlpTrace, l: usize, unit: usize, value: f64) -> (Vec<f64>, Vec<bool>) {
        let mut z = trace.pre[l].clone();
        self.layers[l].add_column(unit, value - trace.inputs[l][unit], &mut z);
        let spec = &self.specs[l];
        let mut pattern: Vec<bool> = z.iter().filter_map(|&v| spec.activation.piece(v)).collect();
        z.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
        if l + 1 == self.layers.len() {
            return (z, pattern);
        }
        let (out, tail) = self.forward_from(l + 1, &z);
        pattern.extend(tail);
        (out, pattern)
    }

    /// Input of layer `layer` as recorded in `trace`.
    pub fn trace_input<'a>(&self, trace: &'a MlpTrace, layer: usize) -> &'a [f64] {
        &trace.inputs[layer]
    }

    /// Kink pattern of layers `..end` recorded in `trace`.
    pub fn trace_pattern_prefix(&self, trace: &MlpTrace, end: usize) -> Vec<bool> {
        pattern_of(&trace.pre[..end], &self.specs[..end])
    }

    /// Backpropagates `grad_output`, accumulating into `grads`; returns `dL/dinput`.
    pub fn backward(&self, trace: &MlpTrace, grad_output: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let mut g = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            if let Some(mask) = &trace.masks[l] {
                g.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            let act = self.specs[l].activation;
            g.iter_mut()
                .zip(&trace.pre[l])
                .for_each(|(v, &z)| *v *= act.derivative(z));
            g = self.layers[l].backward(&trace.inputs[l], &g, &mut grads.layers[l]);
        }
        g
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights().len() + l.bias().len())
            .sum()
    }

    pub fn locate(&self, mut idx: usize) -> ParamLocation {
        for (layer, l) in self.layers.iter().enumerate() {
            let nw = l.weights().len();
            if idx < nw {
                return ParamLocation {
                    layer,
                    is_bias: false,
                    offset: idx,
                };
            }
            idx -= nw;
            let nb = l.bias().len();
            if idx < nb {
                return ParamLocation {
                    layer,
                    is_bias: true,
                    offset: idx,
                };
            }
            idx -= nb;
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, idx: usize) -> f32 {
        let loc = self.locate(idx);
        let layer = &self.layers[loc.layer];
        if loc.is_bias {
            layer.bias()[loc.offset]
        } else {
            layer.weights()[loc.offset]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f32) {
        let loc = self.locate(idx);
        let layer = &mut self.layers[loc.layer];
        if loc.is_bias {
            layer.bias_mut()[loc.offset] = value;
        } else {
            layer.weights_mut()[loc.offset] = value;
        }
    }
}
