use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use crate::{Arm, Error, Result};

/// Marginal distributions of the clinical covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClinicalMarginals {
    pub age_mean: f64,
    pub age_std: f64,
    pub male_fraction: f64,
    pub edss_mean: f64,
    pub edss_std: f64,
    /// T2 lesion volume, log-normal with this mean and standard deviation.
    pub t2vol_mean: f64,
    pub t2vol_std: f64,
    /// Gad-enhancing lesion count, gamma-Poisson with this mean and standard deviation.
    pub gad_mean: f64,
    pub gad_std: f64,
}

impl Default for ClinicalMarginals {
    fn default() -> Self {
        Self {
            age_mean: 37.8,
            age_std: 9.2,
            male_fraction: 0.31,
            edss_mean: 2.7,
            edss_std: 1.2,
            t2vol_mean: 9.2,
            t2vol_std: 11.0,
            gad_mean: 1.6,
            gad_std: 4.2,
        }
    }
}

/// Placebo log-mean `η₀(x) = intercept + coefficients · x̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Arm effect on the log-mean scale: `δₜ(x) = intercept − magnitude · sigmoid(weights · x̃)`.
///
/// `intercept ≤ 0` and `magnitude ≥ 0`, so no arm raises expected counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmEffect {
    pub intercept: f64,
    pub magnitude: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub arm_sizes: BTreeMap<Arm, usize>,
    pub latent_dim: usize,
    pub clinical: ClinicalMarginals,
    pub baseline: BaselineModel,
    /// Effects for the non-placebo arms.
    pub effects: BTreeMap<Arm, ArmEffect>,
    /// Target MEDA fractions; when present, intercepts are calibrated before sampling.
    pub meda_targets: Option<BTreeMap<Arm, f64>>,
    pub seed: u64,
}

fn feature_weights(pairs: &[(usize, f64)], dim: usize) -> Vec<f64> {
    let mut w = vec![0.0; dim];
    for &(i, v) in pairs {
        w[i] = v;
    }
    w
}

impl Default for SimConfig {
    fn default() -> Self {
        const LATENTS: usize = 6;
        let dim = FeatureSchema::CLINICAL.len() + LATENTS;
        let (age, edss, t2, gad) = (FeatureSchema::AGE, FeatureSchema::EDSS, FeatureSchema::T2VOL, FeatureSchema::GAD);
        let latent = |k: usize| FeatureSchema::CLINICAL.len() + k - 1;

        let baseline = BaselineModel {
            intercept: 1.0,
            coefficients: feature_weights(
                &[
                    (age, -0.15),
                    (edss, 0.10),
                    (t2, 0.35),
                    (gad, 0.30),
                    (latent(1), 0.55),
                    (latent(2), 0.45),
                    (latent(3), 0.30),
                ],
                dim,
            ),
        };
        let effect = |magnitude: f64, pairs: &[(usize, f64)]| ArmEffect {
            intercept: 0.0,
            magnitude,
            weights: feature_weights(pairs, dim),
        };
        let effects = BTreeMap::from([
            (Arm::NE, effect(0.4, &[(latent(4), 2.0), (age, -0.5)])),
            (Arm::LE, effect(0.8, &[(latent(5), 2.0), (edss, -0.8)])),
            (Arm::ME, effect(1.2, &[(latent(4), 1.5), (latent(6), 1.5), (t2, 0.5)])),
            (Arm::HE, effect(2.0, &[(latent(6), 2.0), (gad, 1.0)])),
        ]);
        Self {
            arm_sizes: BTreeMap::from([
                (Arm::Placebo, 362),
                (Arm::NE, 261),
                (Arm::LE, 295),
                (Arm::ME, 431),
                (Arm::HE, 468),
            ]),
            latent_dim: LATENTS,
            clinical: ClinicalMarginals::default(),
            baseline,
            effects,
            meda_targets: Some(BTreeMap::from([
                (Arm::Placebo, 0.457),
                (Arm::NE, 0.544),
                (Arm::LE, 0.638),
                (Arm::ME, 0.774),
                (Arm::HE, 0.996),
            ])),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Default cohort structure with every treatment effect removed and no calibration.
    pub fn null_effect() -> Self {
        let mut cfg = Self::default();
        for effect in cfg.effects.values_mut() {
            effect.intercept = 0.0;
            effect.magnitude = 0.0;
        }
        cfg.meda_targets = None;
        cfg
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::with_latents(self.latent_dim)
    }

    pub fn total_size(&self) -> usize {
        self.arm_sizes.values().sum()
    }

    pub fn arms(&self) -> Vec<Arm> {
        self.arm_sizes.keys().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.schema().len();
        if !self.arm_sizes.contains_key(&Arm::Placebo) {
            return Err(Error::Config("sim.arm_sizes must include placebo".into()));
        }
        for (arm, &n) in &self.arm_sizes {
            if n == 0 {
                return Err(Error::Config(format!("sim.arm_sizes.{arm} must be > 0")));
            }
            if !arm.is_placebo() && !self.effects.contains_key(arm) {
                return Err(Error::Config(format!("sim.effects.{arm} is missing")));
            }
        }
        if self.baseline.coefficients.len() != dim {
            return Err(Error::Config(format!(
                "sim.baseline.coefficients has {} entries, schema has {dim} features",
                self.baseline.coefficients.len()
            )));
        }
        for (arm, e) in &self.effects {
            if arm.is_placebo() {
                return Err(Error::Config("sim.effects must not contain placebo".into()));
            }
            if e.weights.len() != dim {
                return Err(Error::Config(format!(
                    "sim.effects.{arm}.weights has {} entries, schema has {dim} features",
                    e.weights.len()
                )));
            }
            if !(e.magnitude >= 0.0 && e.intercept <= 0.0) {
                return Err(Error::Config(format!(
                    "sim.effects.{arm}: treatments must not raise expected counts (intercept {} > 0 or magnitude {} < 0)",
                    e.intercept, e.magnitude
                )));
            }
        }
        if let Some(targets) = &self.meda_targets {
            for (arm, &t) in targets {
                if !(t > 0.0 && t <= 1.0) {
                    return Err(Error::Config(format!("sim.meda_targets.{arm} = {t} must lie in (0, 1]")));
                }
                if !self.arm_sizes.contains_key(arm) {
                    return Err(Error::Config(format!("sim.meda_targets.{arm} names an arm with no patients")));
                }
            }
        }
        let c = &self.clinical;
        let positive = [c.age_std, c.edss_std, c.t2vol_mean, c.t2vol_std, c.gad_mean, c.gad_std];
        if positive.iter().any(|v| !(*v > 0.0)) || !(0.0..=1.0).contains(&c.male_fraction) {
            return Err(Error::Config("sim.clinical marginals must have positive scales".into()));
        }
        Ok(())
    }
}
