use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;
use upliftforge::cate::RiskPolicy;
use upliftforge::cv::EnsemblePrediction;
use upliftforge::pipeline::ModelSet;
use upliftforge::sim::{FeatureSchema, PatientRecord};
use upliftforge::{Error, Result};

use crate::api::{EnsembleInfo, EnsembleSource, Subject};
use crate::error::ApiError;

/// Everything the service reads; never mutated after construction.
#[derive(Debug)]
pub struct ServiceState {
    models: ModelSet,
    records: BTreeMap<u64, PatientRecord>,
    policy: RiskPolicy,
}

/// Cheaply clonable handle shared by all request handlers.
#[derive(Debug, Clone)]
pub struct AppState(Arc<ServiceState>);

/// A resolved request subject with its ensemble prediction.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub subject: Subject,
    pub ensemble: EnsembleInfo,
    pub prediction: EnsemblePrediction,
}

impl ServiceState {
    /// Checks that the cohort matches the model schema and arm set.
    pub fn new(models: ModelSet, schema: &FeatureSchema, records: Vec<PatientRecord>, policy: RiskPolicy) -> Result<Self> {
        if schema != models.schema() {
            return Err(Error::Data(format!(
                "cohort features {:?} differ from the model features {:?}",
                schema.names(),
                models.schema().names()
            )));
        }
        let arms = models.arms();
        let mut by_id = BTreeMap::new();
        for r in records {
            if r.features.len() != schema.len() {
                return Err(Error::Data(format!("patient {} has {} features", r.id, r.features.len())));
            }
            if !arms.contains(&r.arm) {
                return Err(Error::Data(format!("patient {} is on arm {} which the models lack", r.id, r.arm)));
            }
            let id = r.id;
            if by_id.insert(id, r).is_some() {
                return Err(Error::Data(format!("duplicate patient id {id}")));
            }
        }
        Ok(Self {
            models,
            records: by_id,
            policy,
        })
    }

    pub fn models(&self) -> &ModelSet {
        &self.models
    }

    pub fn records(&self) -> &BTreeMap<u64, PatientRecord> {
        &self.records
    }

    pub fn policy(&self) -> &RiskPolicy {
        &self.policy
    }

    /// Prediction for a known patient (held-out fold when it was trained on) or for raw features.
    pub fn resolve(
        &self,
        patient_id: Option<u64>,
        features: Option<&BTreeMap<String, f64>>,
    ) -> std::result::Result<Resolved, ApiError> {
        match (patient_id, features) {
            (Some(_), Some(_)) => Err(ApiError::unprocessable(
                "give either patient_id or features, not both",
                json!({ "fields": ["patient_id", "features"] }),
            )),
            (None, None) => Err(ApiError::unprocessable(
                "one of patient_id or features is required",
                json!({ "fields": ["patient_id", "features"] }),
            )),
            (Some(id), None) => {
                let record = self.records.get(&id).ok_or(ApiError::UnknownPatient(id))?;
                let (prediction, fold) = self
                    .models
                    .predict_for_id(id, &record.features)
                    .map_err(|e| ApiError::Internal(e.to_string()))?;
                Ok(Resolved {
                    subject: Subject {
                        patient_id: Some(id),
                        factual_arm: Some(record.arm),
                        observed_count: Some(record.y),
                    },
                    ensemble: self.ensemble_info(fold),
                    prediction,
                })
            }
            (None, Some(named)) => {
                let schema = self.models.schema();
                let raw = schema
                    .vector_from_named(named.iter().map(|(k, v)| (k.as_str(), *v)))
                    .map_err(|e| {
                        let problems: Vec<String> = match e {
                            Error::Data(m) => m.split("; ").map(str::to_string).collect(),
                            other => vec![other.to_string()],
                        };
                        ApiError::unprocessable(
                            "features do not match the model schema",
                            json!({ "expected": schema.names(), "problems": problems }),
                        )
                    })?;
                let prediction = self
                    .models
                    .predict_serving(&raw)
                    .map_err(|e| ApiError::Internal(e.to_string()))?;
                Ok(Resolved {
                    subject: Subject {
                        patient_id: None,
                        factual_arm: None,
                        observed_count: None,
                    },
                    ensemble: self.ensemble_info(None),
                    prediction,
                })
            }
        }
    }

    fn ensemble_info(&self, fold: Option<usize>) -> EnsembleInfo {
        EnsembleInfo {
            source: if fold.is_some() {
                EnsembleSource::HeldOutFold
            } else {
                EnsembleSource::Serving
            },
            outer_fold: fold,
            members: if fold.is_some() {
                self.models.plan().k_inner
            } else {
                self.models.len()
            },
            model_digest: self.models.digest().to_string(),
        }
    }
}

impl AppState {
    pub fn new(state: ServiceState) -> Self {
        Self(Arc::new(state))
    }
}

impl std::ops::Deref for AppState {
    type Target = ServiceState;

    fn deref(&self) -> &ServiceState {
        &self.0
    }
}
