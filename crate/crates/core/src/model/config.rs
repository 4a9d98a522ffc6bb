use serde::{Deserialize, Serialize};

use crate::nn::{AdamWConfig, LossKind};
use crate::sim::FeatureSchema;
use crate::{Arm, Error, Result};

/// Which raw columns reach the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Imaging-derived columns into the trunk, age/sex/EDSS concatenated before the heads.
    All,
    /// The five clinical columns routed into the trunk.
    Clinical,
    /// Imaging-derived columns only (t2vol, gad, latents).
    Latent,
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FeatureSet::All),
            "clinical" => Ok(FeatureSet::Clinical),
            "latent" => Ok(FeatureSet::Latent),
            other => Err(Error::Config(format!("unknown feature set '{other}' (expected all|clinical|latent)"))),
        }
    }
}

/// Indices into the raw feature vector for the trunk input and the head-side concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRouting {
    pub trunk: Vec<usize>,
    pub head: Vec<usize>,
}

impl FeatureRouting {
    pub fn for_set(set: FeatureSet, schema: &FeatureSchema) -> Self {
        let imaging: Vec<usize> = [FeatureSchema::T2VOL, FeatureSchema::GAD]
            .into_iter()
            .chain(FeatureSchema::CLINICAL.len()..schema.len())
            .collect();
        match set {
            FeatureSet::All => Self {
                trunk: imaging,
                head: vec![FeatureSchema::AGE, FeatureSchema::SEX, FeatureSchema::EDSS],
            },
            FeatureSet::Clinical => Self {
                trunk: (0..FeatureSchema::CLINICAL.len()).collect(),
                head: Vec::new(),
            },
            FeatureSet::Latent => Self {
                trunk: imaging,
                head: Vec::new(),
            },
        }
    }
}

/// Architecture of a [`super::MultiHeadNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arms: Vec<Arm>,
    pub trunk_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub features: FeatureSet,
    pub loss: LossKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            arms: Arm::ALL.to_vec(),
            trunk_widths: vec![64, 64],
            head_widths: vec![128, 32, 16],
            leaky_slope: 0.01,
            dropout: 0.3,
            features: FeatureSet::All,
            loss: LossKind::LogCountMSE,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.arms.len() < 2 {
            return Err(Error::Config(format!("a multi-head model needs at least 2 arms, got {}", self.arms.len())));
        }
        let mut sorted = self.arms.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.arms.len() {
            return Err(Error::Config("model arms must be distinct".into()));
        }
        if !self.arms.contains(&Arm::Placebo) {
            return Err(Error::Config("model arms must include placebo".into()));
        }
        if self.trunk_widths.is_empty() || self.head_widths.is_empty() {
            return Err(Error::Config("trunk and head need at least one hidden layer".into()));
        }
        if self.trunk_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be > 0".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} must lie in (0, 1)", self.leaky_slope)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub features: FeatureSet,
    pub loss: LossKind,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub trunk_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        let spec = ModelSpec::default();
        Self {
            learning_rate: adam.lr,
            batch_size: 8,
            max_epochs: 300,
            patience: 20,
            dropout: spec.dropout,
            features: spec.features,
            loss: spec.loss,
            seed: 0,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            trunk_widths: spec.trunk_widths,
            head_widths: spec.head_widths,
            leaky_slope: spec.leaky_slope,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be ≥ 1".into()));
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "train.patience ({}) must be < train.max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        self.adamw().validate()?;
        self.model_spec(Arm::ALL.to_vec()).validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn model_spec(&self, arms: Vec<Arm>) -> ModelSpec {
        ModelSpec {
            arms,
            trunk_widths: self.trunk_widths.clone(),
            head_widths: self.head_widths.clone(),
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
            features: self.features,
            loss: self.loss,
        }
    }

    /// Digest of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_for_default_schema() {
        let schema = FeatureSchema::with_latents(3);
        let all = FeatureRouting::for_set(FeatureSet::All, &schema);
        assert_eq!(all.trunk, vec![3, 4, 5, 6, 7]);
        assert_eq!(all.head, vec![0, 1, 2]);
        let clinical = FeatureRouting::for_set(FeatureSet::Clinical, &schema);
        assert_eq!(clinical.trunk, vec![0, 1, 2, 3, 4]);
        assert!(clinical.head.is_empty());
    }

    #[test]
    fn patience_must_be_below_max_epochs() {
        let cfg = TrainConfig {
            patience: 10,
            max_epochs: 10,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn digest_tracks_loss_kind() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            loss: LossKind::MedaBCE,
            ..Default::default()
        };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), TrainConfig::default().digest());
    }
}
