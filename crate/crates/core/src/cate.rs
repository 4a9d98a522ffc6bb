//! Potential-outcome profiles, risk-adjusted CATE and treatment recommendation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cv::EnsemblePrediction;
use crate::nn::LossKind;
use crate::util::sigmoid;
use crate::{Arm, Error, Result};

/// Count threshold below which a patient has minimal evidence of disease activity.
pub const MEDA_COUNT_THRESHOLD: f64 = 3.0;

/// Two arms whose adjusted CATE differ by less than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// The unit in which a profile's per-arm values are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileScale {
    /// Expected future lesion count (regression heads).
    Count,
    /// Probability of disease activity, `1 - P(MEDA)` (classification heads).
    ActivityProbability,
}

/// Per-arm predicted outcome, ensemble spread and CATE versus placebo.
/// Lower outcome values are better on both scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateProfile {
    pub scale: ProfileScale,
    pub outcome: BTreeMap<Arm, f64>,
    pub spread: BTreeMap<Arm, f64>,
    pub tau: BTreeMap<Arm, f64>,
    /// Spread-softened probability of fewer than three lesions; a display aid, not calibrated.
    pub meda_probability: BTreeMap<Arm, f64>,
}

/// Head output mapped to the profile scale.
pub fn outcome_scale(loss: LossKind, output: f64) -> f64 {
    match loss {
        LossKind::LogCountMSE => (output.exp() - 1.0).max(0.0),
        LossKind::MedaBCE => 1.0 - sigmoid(output),
    }
}

/// τ̂ for every arm from per-arm head outputs; placebo maps to exactly 0.
pub fn tau_from_outputs(outputs: &BTreeMap<Arm, f64>, loss: LossKind) -> Result<BTreeMap<Arm, f64>> {
    let base = outputs
        .get(&Arm::Placebo)
        .ok_or_else(|| Error::Profile("predictions lack the placebo arm".into()))?;
    let base = outcome_scale(loss, *base);
    Ok(outputs
        .iter()
        .map(|(a, v)| (*a, if a.is_placebo() { 0.0 } else { outcome_scale(loss, *v) - base }))
        .collect())
}

fn soft_meda(count: f64, spread: f64) -> f64 {
    if spread > 0.0 {
        let n = Normal::new(0.0, 1.0).expect("standard normal");
        n.cdf((MEDA_COUNT_THRESHOLD - count) / spread)
    } else if count < MEDA_COUNT_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

pub fn build_profile(pred: &EnsemblePrediction, loss: LossKind) -> Result<CateProfile> {
    if !pred.mean.contains_key(&Arm::Placebo) {
        return Err(Error::Profile("ensemble prediction lacks the placebo arm".into()));
    }
    let mut outcome = BTreeMap::new();
    let mut spread = BTreeMap::new();
    let mut meda = BTreeMap::new();
    for (arm, mean) in &pred.mean {
        if !mean.is_finite() {
            return Err(Error::Profile(format!("non-finite prediction for {arm}")));
        }
        let members: Vec<f64> = match pred.members.get(arm) {
            Some(m) if !m.is_empty() => m.iter().map(|v| outcome_scale(loss, *v)).collect(),
            _ => return Err(Error::Profile(format!("no ensemble members for {arm}"))),
        };
        let value = outcome_scale(loss, *mean);
        let s = crate::util::population_std(&members);
        outcome.insert(*arm, value);
        spread.insert(*arm, s);
        meda.insert(
            *arm,
            match loss {
                LossKind::LogCountMSE => soft_meda(value, s),
                LossKind::MedaBCE => 1.0 - value,
            },
        );
    }
    Ok(CateProfile {
        scale: match loss {
            LossKind::LogCountMSE => ProfileScale::Count,
            LossKind::MedaBCE => ProfileScale::ActivityProbability,
        },
        tau: tau_from_outputs(&pred.mean, loss)?,
        outcome,
        spread,
        meda_probability: meda,
    })
}

/// Incremental risk λ and per-arm risk classes `c`, giving `r = c·λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPolicy {
    pub lambda: f64,
    pub risk_class: BTreeMap<Arm, f64>,
}

impl RiskPolicy {
    pub const DEFAULT_NE_CLASS: f64 = 1.0;

    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_ne_class(lambda, Self::DEFAULT_NE_CLASS)
    }

    pub fn with_ne_class(lambda: f64, ne_class: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be finite and ≥ 0, got {lambda}")));
        }
        if !(ne_class.is_finite() && ne_class >= 0.0) {
            return Err(Error::Parameter(format!("NE risk class must be finite and ≥ 0, got {ne_class}")));
        }
        let risk_class = [
            (Arm::Placebo, 0.0),
            (Arm::NE, ne_class),
            (Arm::LE, 1.0),
            (Arm::ME, 2.0),
            (Arm::HE, 3.0),
        ]
        .into_iter()
        .collect();
        Ok(Self { lambda, risk_class })
    }

    pub fn at_lambda(&self, lambda: f64) -> Result<Self> {
        Self::with_ne_class(lambda, self.class(Arm::NE))
    }

    pub fn class(&self, arm: Arm) -> f64 {
        self.risk_class[&arm]
    }

    pub fn risk(&self, arm: Arm) -> f64 {
        self.class(arm) * self.lambda
    }
}

/// τ̂* = τ̂ + c·λ per arm; placebo stays 0.
pub fn risk_adjusted_cate(tau: &BTreeMap<Arm, f64>, policy: &RiskPolicy) -> BTreeMap<Arm, f64> {
    tau.iter()
        .map(|(a, t)| (*a, if a.is_placebo() { 0.0 } else { t + policy.risk(*a) }))
        .collect()
}

/// Arm minimising τ̂*, placebo included at 0. Near-ties go to the lower risk
/// class, then to the earlier arm in [`Arm::ALL`] order.
pub fn recommend(tau: &BTreeMap<Arm, f64>, policy: &RiskPolicy) -> Result<Arm> {
    let adjusted = risk_adjusted_cate(tau, policy);
    let mut candidates: Vec<(Arm, f64)> = adjusted.into_iter().collect();
    if !candidates.iter().any(|(a, _)| a.is_placebo()) {
        candidates.push((Arm::Placebo, 0.0));
    }
    if let Some((a, v)) = candidates.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Profile(format!("adjusted CATE for {a} is not finite ({v})")));
    }
    let min = candidates.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let best = candidates
        .iter()
        .filter(|(_, v)| *v <= min + TIE_TOLERANCE)
        .min_by(|(a, _), (b, _)| {
            policy
                .class(*a)
                .total_cmp(&policy.class(*b))
                .then(a.index().cmp(&b.index()))
        })
        .expect("placebo is always a candidate");
    Ok(best.0)
}

/// Recommendation at each λ of an ascending grid.
pub fn lambda_sweep(tau: &BTreeMap<Arm, f64>, policy: &RiskPolicy, grid: &[f64]) -> Result<Vec<(f64, Arm)>> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Parameter("lambda grid must be sorted ascending".into()));
    }
    grid.iter()
        .map(|&l| Ok((l, recommend(tau, &policy.at_lambda(l)?)?)))
        .collect()
}

/// Default λ grid `0, 0.25, …, 3`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=12).map(|i| i as f64 * 0.25).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub outcome: f64,
    pub spread: f64,
    pub tau: f64,
    pub tau_star: f64,
    pub risk_class: f64,
    pub meda_probability: f64,
}

/// Serializable profile with its recommendation under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub scale: ProfileScale,
    pub arms: Vec<ArmSummary>,
    pub recommendation: Arm,
    pub lambda: f64,
    pub risk_class: BTreeMap<Arm, f64>,
    /// True when NE uses the default class rather than a configured one.
    pub ne_risk_class_default: bool,
    pub meda_threshold: f64,
}

pub fn profile_report(profile: &CateProfile, policy: &RiskPolicy) -> Result<ProfileReport> {
    let tau_star = risk_adjusted_cate(&profile.tau, policy);
    Ok(ProfileReport {
        scale: profile.scale,
        arms: profile
            .outcome
            .keys()
            .map(|a| ArmSummary {
                arm: *a,
                outcome: profile.outcome[a],
                spread: profile.spread[a],
                tau: profile.tau[a],
                tau_star: tau_star[a],
                risk_class: policy.class(*a),
                meda_probability: profile.meda_probability[a],
            })
            .collect(),
        recommendation: recommend(&profile.tau, policy)?,
        lambda: policy.lambda,
        risk_class: policy.risk_class.clone(),
        ne_risk_class_default: policy.class(Arm::NE) == RiskPolicy::DEFAULT_NE_CLASS,
        meda_threshold: MEDA_COUNT_THRESHOLD,
    })
}
