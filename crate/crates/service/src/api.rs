//! Request and response bodies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use upliftforge::cate::{ArmSummary, ProfileScale};
use upliftforge::nn::LossKind;
use upliftforge::Arm;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub schema_version: u32,
    pub status: String,
    pub model_digest: String,
    pub members: usize,
    pub arms: Vec<Arm>,
    pub loss: LossKind,
    pub patients: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClinicalFeatures {
    pub age: f64,
    pub sex: f64,
    pub edss: f64,
    pub t2vol: f64,
    pub gad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientSummary {
    pub id: u64,
    pub arm: Arm,
    pub observed_count: i64,
    pub clinical: ClinicalFeatures,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientPage {
    pub schema_version: u32,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub patients: Vec<PatientSummary>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRequest {
    pub patient_id: Option<u64>,
    pub features: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub patient_id: Option<u64>,
    pub features: Option<BTreeMap<String, f64>>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub patient_id: Option<u64>,
    pub features: Option<BTreeMap<String, f64>>,
    /// Ascending λ values; the default grid when absent.
    pub lambdas: Option<Vec<f64>>,
}

/// Who the prediction is for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub patient_id: Option<u64>,
    pub factual_arm: Option<Arm>,
    pub observed_count: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSource {
    /// The members of the outer fold that held the patient out.
    HeldOutFold,
    /// Every member of the model set.
    Serving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleInfo {
    pub source: EnsembleSource,
    pub outer_fold: Option<usize>,
    pub members: usize,
    pub model_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileArm {
    pub arm: Arm,
    pub outcome: f64,
    pub spread: f64,
    pub tau: f64,
    pub meda_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResponse {
    pub schema_version: u32,
    pub subject: Subject,
    pub ensemble: EnsembleInfo,
    pub scale: ProfileScale,
    pub meda_threshold: f64,
    pub arms: Vec<ProfileArm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub schema_version: u32,
    pub subject: Subject,
    pub ensemble: EnsembleInfo,
    pub lambda: f64,
    pub risk_class: BTreeMap<Arm, f64>,
    pub ne_risk_class_default: bool,
    pub recommendation: Arm,
    pub scale: ProfileScale,
    pub meda_threshold: f64,
    pub arms: Vec<ArmSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub recommendation: Arm,
    pub risk_class: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub schema_version: u32,
    pub subject: Subject,
    pub ensemble: EnsembleInfo,
    pub risk_class: BTreeMap<Arm, f64>,
    pub points: Vec<SweepPoint>,
}
