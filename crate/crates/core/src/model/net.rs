use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FeatureRouting, ModelSpec};
use crate::nn::{Activation, LayerSpec, Mlp};
use crate::sim::{FeatureSchema, PatientRecord};
use crate::util::mix_seed;
use crate::{Arm, Error, Result};

/// Per-feature affine standardisation `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-12;

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population std of every column; a constant column gets std 1.
    pub fn fit(dim: usize, rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot fit normalisation on an empty training split".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape(format!("feature row has {} values, schema has {dim}", bad.len())));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > STD_FLOOR {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Provenance carried inside a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub init: String,
    /// Arms that had no training records; their heads keep initial weights.
    pub untrained_heads: Vec<Arm>,
    pub epochs_trained: usize,
}

/// A sample with standardised, routed inputs, ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: u64,
    pub head: usize,
    pub y: i64,
    pub trunk_input: Vec<f64>,
    pub head_extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadNet {
    pub(crate) spec: ModelSpec,
    pub(crate) schema: FeatureSchema,
    pub(crate) routing: FeatureRouting,
    pub(crate) norm: Normalization,
    pub(crate) trunk: Mlp,
    pub(crate) heads: Vec<Mlp>,
    pub(crate) meta: ModelMetadata,
}

pub(crate) fn trunk_specs(spec: &ModelSpec) -> Vec<LayerSpec> {
    spec.trunk_widths
        .iter()
        .map(|_| LayerSpec {
            activation: Activation::LeakyRelu {
                slope: spec.leaky_slope,
            },
            dropout: spec.dropout,
        })
        .collect()
}

pub(crate) fn head_specs(spec: &ModelSpec) -> Vec<LayerSpec> {
    let hidden = LayerSpec {
        activation: Activation::Relu,
        dropout: 0.0,
    };
    let mut out = vec![hidden; spec.head_widths.len()];
    out.push(LayerSpec {
        activation: Activation::Identity,
        dropout: 0.0,
    });
    out
}

const TRUNK_STREAM: u64 = 0x7E;

/// He-uniform initialisation of trunk and heads, each from its own substream of `seed`.
pub fn init_model(spec: &ModelSpec, schema: &FeatureSchema, seed: u64) -> Result<MultiHeadNet> {
    spec.validate()?;
    let routing = FeatureRouting::for_set(spec.features, schema);
    if routing.trunk.is_empty() {
        return Err(Error::Config(format!("feature set {:?} leaves the trunk without inputs", spec.features)));
    }
    let base = mix_seed(seed, 0x0DE1);
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(TRUNK_STREAM);
    let mut trunk_dims = vec![routing.trunk.len()];
    trunk_dims.extend(&spec.trunk_widths);
    let trunk = Mlp::init(&trunk_dims, trunk_specs(spec), &mut rng)?;

    let mut head_dims = vec![trunk.out_dim() + routing.head.len()];
    head_dims.extend(&spec.head_widths);
    head_dims.push(1);
    let heads = spec
        .arms
        .iter()
        .map(|arm| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(arm.index() as u64 + 1);
            Mlp::init(&head_dims, head_specs(spec), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MultiHeadNet {
        spec: spec.clone(),
        schema: schema.clone(),
        norm: Normalization::identity(schema.len()),
        routing,
        trunk,
        heads,
        meta: ModelMetadata {
            seed,
            config_hash: String::new(),
            init: "he-uniform".into(),
            untrained_heads: Vec::new(),
            epochs_trained: 0,
        },
    })
}

impl MultiHeadNet {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arms(&self) -> &[Arm] {
        &self.spec.arms
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn routing(&self) -> &FeatureRouting {
        &self.routing
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn set_normalization(&mut self, norm: Normalization) -> Result<()> {
        if norm.mean.len() != self.schema.len() || norm.std.len() != self.schema.len() {
            return Err(Error::Shape(format!(
                "normalisation has {} entries, schema has {}",
                norm.mean.len(),
                self.schema.len()
            )));
        }
        if norm.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || norm.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Parameter("normalisation statistics must be finite with std > 0".into()));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.meta
    }

    pub fn metadata_mut(&mut self) -> &mut ModelMetadata {
        &mut self.meta
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn head(&self, arm: Arm) -> Option<&Mlp> {
        self.head_index(arm).map(|i| &self.heads[i])
    }

    pub fn head_mut(&mut self, arm: Arm) -> Option<&mut Mlp> {
        self.head_index(arm).map(move |i| &mut self.heads[i])
    }

    pub fn head_index(&self, arm: Arm) -> Option<usize> {
        self.spec.arms.iter().position(|a| *a == arm)
    }

    /// Same network with heads stored in `order`.
    pub fn with_arm_order(&self, order: &[Arm]) -> Result<Self> {
        let mut sorted_new = order.to_vec();
        sorted_new.sort();
        let mut sorted_old = self.spec.arms.clone();
        sorted_old.sort();
        if sorted_new != sorted_old {
            return Err(Error::Config(format!("arm order {order:?} is not a permutation of {:?}", self.spec.arms)));
        }
        let mut out = self.clone();
        out.heads = order
            .iter()
            .map(|a| self.heads[self.head_index(*a).expect("checked permutation")].clone())
            .collect();
        out.spec.arms = order.to_vec();
        Ok(out)
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.heads.iter().map(Mlp::num_params).sum::<usize>()
    }

    /// Standardises and routes one raw feature vector.
    pub fn route(&self, raw: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if raw.len() != self.schema.len() {
            return Err(Error::Shape(format!(
                "feature vector has {} values, model schema has {}",
                raw.len(),
                self.schema.len()
            )));
        }
        let z = self.norm.apply(raw);
        Ok((
            self.routing.trunk.iter().map(|&j| z[j]).collect(),
            self.routing.head.iter().map(|&j| z[j]).collect(),
        ))
    }

    pub fn prepare(&self, records: &[PatientRecord]) -> Result<Vec<PreparedSample>> {
        records
            .iter()
            .map(|r| {
                let head = self.head_index(r.arm).ok_or_else(|| {
                    Error::Data(format!("record {} is assigned to {}, which has no head in this model", r.id, r.arm))
                })?;
                let (trunk_input, head_extra) = self.route(&r.features)?;
                Ok(PreparedSample {
                    id: r.id,
                    head,
                    y: r.y,
                    trunk_input,
                    head_extra,
                })
            })
            .collect()
    }

    /// Head outputs for already routed inputs, in `arms()` order.
    pub fn predict_routed(&self, trunk_input: &[f64], head_extra: &[f64]) -> Result<Vec<f64>> {
        let mut rep = self.trunk.forward(trunk_input)?;
        rep.extend_from_slice(head_extra);
        self.heads.iter().map(|h| Ok(h.forward(&rep)?[0])).collect()
    }

    /// One scalar per arm: log-count or logit depending on the loss kind.
    pub fn predict_all_heads(&self, raw: &[f64]) -> Result<BTreeMap<Arm, f64>> {
        let (t, h) = self.route(raw)?;
        let values = self.predict_routed(&t, &h)?;
        Ok(self.spec.arms.iter().copied().zip(values).collect())
    }
}
