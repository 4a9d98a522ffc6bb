use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::table::PredictionTable;
use crate::cate::tau_from_outputs;
use crate::sim::OracleRow;
use crate::util::pearson;
use crate::{Arm, Error, Result};

/// Pearson correlation of estimated and true CATE over every patient.
/// `None` where either side has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateRecovery {
    /// All treatment arms stacked into one sample.
    pub pooled: Option<f64>,
    pub per_arm: BTreeMap<Arm, Option<f64>>,
}

pub fn cate_recovery(table: &PredictionTable, oracle: &[OracleRow]) -> Result<CateRecovery> {
    let by_id: HashMap<u64, &OracleRow> = oracle.iter().map(|o| (o.id, o)).collect();
    let treatments: Vec<Arm> = table.arms().iter().copied().filter(|a| !a.is_placebo()).collect();
    let mut est: BTreeMap<Arm, Vec<f64>> = BTreeMap::new();
    let mut truth: BTreeMap<Arm, Vec<f64>> = BTreeMap::new();
    for r in table.rows() {
        let o = by_id
            .get(&r.id)
            .ok_or_else(|| Error::Data(format!("oracle has no row for id {}", r.id)))?;
        let tau = tau_from_outputs(&r.yhat, table.loss())?;
        for a in &treatments {
            let t = o
                .cate
                .get(a)
                .ok_or_else(|| Error::Data(format!("oracle row {} lacks arm {a}", r.id)))?;
            est.entry(*a).or_default().push(tau[a]);
            truth.entry(*a).or_default().push(*t);
        }
    }
    let pooled_est: Vec<f64> = est.values().flatten().copied().collect();
    let pooled_truth: Vec<f64> = truth.values().flatten().copied().collect();
    Ok(CateRecovery {
        pooled: pearson(&pooled_est, &pooled_truth),
        per_arm: treatments.iter().map(|a| (*a, pearson(&est[a], &truth[a]))).collect(),
    })
}
