use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::EnsemblePrediction;
use super::plan::FoldPlan;
use crate::eval::{PredictionRow, PredictionTable};
use crate::model::{fit, init_model, FeatureSet, MultiHeadNet, TrainConfig, TrainHistory};
use crate::nn::LossKind;
use crate::sim::{FeatureSchema, PatientRecord};
use crate::util::{mix_seed, sha256_hex};
use crate::{Arm, Error, Result};

/// One inner-fold model of one outer fold.
#[derive(Debug, Clone)]
pub struct CvMember {
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
    pub model: MultiHeadNet,
    pub history: TrainHistory,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
}

/// Ensemble predictions of one outer fold's members on its test records.
#[derive(Debug, Clone)]
pub struct FoldPredictions {
    pub outer: usize,
    pub rows: Vec<(u64, EnsemblePrediction)>,
}

#[derive(Debug, Clone)]
pub struct CvRun {
    pub plan: FoldPlan,
    pub config: TrainConfig,
    pub arms: Vec<Arm>,
    pub members: Vec<CvMember>,
    pub folds: Vec<FoldPredictions>,
    outcomes: BTreeMap<u64, (Arm, i64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberProvenance {
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub train_ids_sha256: String,
    pub val_ids_sha256: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub untrained_heads: Vec<Arm>,
    pub model_sha256: String,
}

/// Sidecar describing which ids every model trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
    pub loss: LossKind,
    pub features: FeatureSet,
    pub k_outer: usize,
    pub k_inner: usize,
    pub outer_test_ids_sha256: Vec<String>,
    pub members: Vec<MemberProvenance>,
}

fn ids_digest(ids: &[u64]) -> String {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let text: Vec<String> = sorted.iter().map(u64::to_string).collect();
    sha256_hex(text.join("\n").as_bytes())
}

fn member_seed(seed: u64, outer: usize, inner: usize, k_inner: usize) -> u64 {
    mix_seed(seed, 0x1000 + (outer * k_inner + inner) as u64)
}

/// Trains the `k_outer × k_inner` members (in parallel) and ensembles each outer
/// fold's members on its held-out records.
pub fn run_nested_cv(
    records: &[PatientRecord],
    schema: &FeatureSchema,
    cfg: &TrainConfig,
    plan: &FoldPlan,
) -> Result<CvRun> {
    cfg.validate()?;
    let by_id: BTreeMap<u64, &PatientRecord> = records.iter().map(|r| (r.id, r)).collect();
    if by_id.len() != records.len() || plan.outer.len() != records.len() || by_id.keys().any(|id| !plan.outer.contains_key(id)) {
        return Err(Error::Fold("fold plan does not cover exactly the given records".into()));
    }
    let mut arms: Vec<Arm> = records.iter().map(|r| r.arm).collect();
    arms.sort();
    arms.dedup();
    let pick = |ids: &[u64]| -> Vec<PatientRecord> { ids.iter().map(|id| by_id[id].clone()).collect() };

    let jobs: Vec<(usize, usize)> = (0..plan.k_outer)
        .flat_map(|o| (0..plan.k_inner).map(move |i| (o, i)))
        .collect();
    let trained: Vec<Result<CvMember>> = jobs
        .par_iter()
        .map(|&(outer, inner)| {
            let (train_ids, val_ids) = plan.member_split(outer, inner);
            let seed = member_seed(cfg.seed, outer, inner, plan.k_inner);
            let member_cfg = TrainConfig { seed, ..cfg.clone() };
            let wrap = |e: Error| match e {
                Error::Training { path, message } => {
                    Error::training(format!("outer fold {outer}, member {inner}: {path}"), message)
                }
                other => Error::training(format!("outer fold {outer}, member {inner}"), other.to_string()),
            };
            let model = init_model(&member_cfg.model_spec(arms.clone()), schema, seed).map_err(wrap)?;
            let (model, history) = fit(model, &pick(&train_ids), &pick(&val_ids), &member_cfg).map_err(wrap)?;
            log::info!(
                "outer {outer} member {inner}: {} epochs, best val loss {:.5} at epoch {}",
                history.epochs.len(),
                history.best_val_loss,
                history.best_epoch
            );
            Ok(CvMember {
                outer,
                inner,
                seed,
                model,
                history,
                train_ids,
                val_ids,
            })
        })
        .collect();
    let members = trained.into_iter().collect::<Result<Vec<_>>>()?;

    let folds = (0..plan.k_outer)
        .into_par_iter()
        .map(|outer| {
            let fold_members: Vec<&CvMember> = members.iter().filter(|m| m.outer == outer).collect();
            let rows = plan
                .test_ids(outer)
                .into_iter()
                .map(|id| {
                    let raw = &by_id[&id].features;
                    let preds = fold_members
                        .iter()
                        .map(|m| m.model.predict_all_heads(raw))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((id, EnsemblePrediction::from_members(&preds)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FoldPredictions { outer, rows })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CvRun {
        plan: plan.clone(),
        config: cfg.clone(),
        arms,
        members,
        folds,
        outcomes: records.iter().map(|r| (r.id, (r.arm, r.y))).collect(),
    })
}

impl CvRun {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.config.seed,
            config_digest: self.config.digest(),
            loss: self.config.loss,
            features: self.config.features,
            k_outer: self.plan.k_outer,
            k_inner: self.plan.k_inner,
            outer_test_ids_sha256: (0..self.plan.k_outer).map(|f| ids_digest(&self.plan.test_ids(f))).collect(),
            members: self
                .members
                .iter()
                .map(|m| MemberProvenance {
                    outer: m.outer,
                    inner: m.inner,
                    seed: m.seed,
                    n_train: m.train_ids.len(),
                    n_val: m.val_ids.len(),
                    train_ids_sha256: ids_digest(&m.train_ids),
                    val_ids_sha256: ids_digest(&m.val_ids),
                    epochs: m.history.epochs.len(),
                    best_epoch: m.history.best_epoch,
                    best_val_loss: m.history.best_val_loss,
                    untrained_heads: m.model.metadata().untrained_heads.clone(),
                    model_sha256: m.model.digest(),
                })
                .collect(),
        }
    }

    /// Members of one outer fold, in inner-fold order.
    pub fn fold_members(&self, outer: usize) -> Vec<&CvMember> {
        let mut out: Vec<&CvMember> = self.members.iter().filter(|m| m.outer == outer).collect();
        out.sort_by_key(|m| m.inner);
        out
    }
}

/// Pools the outer-fold ensemble predictions into one table sorted by id.
pub fn collect_outer_predictions(run: &CvRun) -> Result<PredictionTable> {
    for f in 0..run.plan.k_outer {
        if !run.folds.iter().any(|p| p.outer == f) {
            return Err(Error::Aggregation(format!("outer fold {f} has no predictions")));
        }
    }
    let mut rows = Vec::with_capacity(run.outcomes.len());
    for fold in &run.folds {
        for (id, pred) in &fold.rows {
            let (arm, y) = *run
                .outcomes
                .get(id)
                .ok_or_else(|| Error::Aggregation(format!("prediction for unknown record {id}")))?;
            if run.plan.outer.get(id) != Some(&fold.outer) {
                return Err(Error::Aggregation(format!(
                    "record {id} was predicted by outer fold {} but belongs to another fold",
                    fold.outer
                )));
            }
            rows.push(PredictionRow {
                id: *id,
                arm,
                y,
                outer_fold: Some(fold.outer),
                yhat: pred.mean.clone(),
                spread: pred.spread.clone(),
            });
        }
    }
    if rows.len() != run.outcomes.len() {
        return Err(Error::Aggregation(format!(
            "{} pooled predictions for {} records",
            rows.len(),
            run.outcomes.len()
        )));
    }
    PredictionTable::new(run.arms.clone(), run.config.loss, rows).map_err(|e| Error::Aggregation(e.to_string()))
}
