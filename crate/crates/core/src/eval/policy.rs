use serde::{Deserialize, Serialize};

use super::table::PredictionTable;
use crate::cate::{recommend, tau_from_outputs, RiskPolicy};
use crate::util::mean;
use crate::Result;

/// Mean risk-adjusted factual outcome `y + c_w·λ` at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub lambda: f64,
    /// Rows whose factual arm equals the recommendation; absent when empty.
    pub followed: Option<f64>,
    pub not_followed: Option<f64>,
    /// All rows under their randomized factual assignment.
    pub random: f64,
    pub n_followed: usize,
    pub n_not_followed: usize,
}

pub fn policy_value_curve(table: &PredictionTable, policy: &RiskPolicy, grid: &[f64]) -> Result<Vec<PolicyPoint>> {
    let taus = table
        .rows()
        .iter()
        .map(|r| tau_from_outputs(&r.yhat, table.loss()))
        .collect::<Result<Vec<_>>>()?;
    grid.iter()
        .map(|&lambda| {
            let p = policy.at_lambda(lambda)?;
            let (mut fol, mut not, mut all) = (Vec::new(), Vec::new(), Vec::new());
            for (r, tau) in table.rows().iter().zip(&taus) {
                let adjusted = r.y as f64 + p.risk(r.arm);
                all.push(adjusted);
                if recommend(tau, &p)? == r.arm {
                    fol.push(adjusted);
                } else {
                    not.push(adjusted);
                }
            }
            let m = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
            Ok(PolicyPoint {
                lambda,
                followed: m(&fol),
                not_followed: m(&not),
                random: mean(&all),
                n_followed: fol.len(),
                n_not_followed: not.len(),
            })
        })
        .collect()
}
