use serde::{Deserialize, Serialize};

use super::stats::{welch_contrast, welch_t, TTest};
use super::table::PredictionTable;
use crate::cate::tau_from_outputs;
use crate::{Arm, Error, Result};

/// Which factual outcome is compared between treated and placebo rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpliftOutcome {
    /// Future lesion count.
    Count,
    /// Indicator of fewer than three lesions.
    Meda,
}

impl UpliftOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            UpliftOutcome::Count => "count",
            UpliftOutcome::Meda => "meda",
        }
    }

    fn value(self, y: i64) -> f64 {
        match self {
            UpliftOutcome::Count => y as f64,
            UpliftOutcome::Meda => f64::from(u8::from(crate::nn::meda_label(y))),
        }
    }
}

/// Treated-vs-placebo comparison within one group of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftBin {
    pub bin: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_treated: usize,
    pub n_placebo: usize,
    pub mean_treated: Option<f64>,
    pub mean_placebo: Option<f64>,
    /// `mean_treated − mean_placebo`; absent when either side is empty.
    pub difference: Option<f64>,
    /// Welch p-value of treated vs placebo within the group.
    pub p_value: Option<f64>,
    #[serde(skip)]
    treated: Vec<f64>,
    #[serde(skip)]
    placebo: Vec<f64>,
}

impl UpliftBin {
    pub fn usable(&self) -> bool {
        self.difference.is_some()
    }

    fn new(bin: usize, taus: &[f64], treated: Vec<f64>, placebo: Vec<f64>) -> Self {
        let m = |v: &[f64]| (!v.is_empty()).then(|| crate::util::mean(v));
        let (mt, mp) = (m(&treated), m(&placebo));
        Self {
            bin,
            tau_min: taus.iter().copied().fold(f64::INFINITY, f64::min),
            tau_max: taus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n_treated: treated.len(),
            n_placebo: placebo.len(),
            mean_treated: mt,
            mean_placebo: mp,
            difference: mt.zip(mp).map(|(a, b)| a - b),
            p_value: welch_t(&treated, &placebo).ok().map(|t| t.p),
            treated,
            placebo,
        }
    }
}

/// Bins of predicted effect for one arm. Bin 0 holds the most negative τ̂
/// (largest predicted benefit); bin `k-1` the least.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub arm: Arm,
    pub k: usize,
    pub outcome: UpliftOutcome,
    pub bins: Vec<UpliftBin>,
    pub whole_group: UpliftBin,
    /// `pairwise_p[i][j]`: Welch p-value that bins i and j have equal differences.
    pub pairwise_p: Vec<Vec<Option<f64>>>,
    /// Contrast of bin 0's difference minus bin `k-1`'s.
    pub top_vs_bottom: Option<TTest>,
}

/// Bin difference contrast `(tᵢ − pᵢ) − (tⱼ − pⱼ)`.
pub fn bin_contrast(a: &UpliftBin, b: &UpliftBin) -> Result<TTest> {
    welch_contrast(&[&a.treated, &a.placebo, &b.treated, &b.placebo], &[1.0, -1.0, -1.0, 1.0])
}

pub fn uplift_bins(table: &PredictionTable, arm: Arm, k: usize, outcome: UpliftOutcome) -> Result<UpliftReport> {
    if arm.is_placebo() {
        return Err(Error::Parameter("uplift bins compare a treatment against placebo".into()));
    }
    if ![3, 5, 10].contains(&k) {
        return Err(Error::Parameter(format!("bin count must be 3, 5 or 10, got {k}")));
    }
    if !table.arms().contains(&arm) {
        return Err(Error::Parameter(format!("table has no predictions for {arm}")));
    }
    let mut pop: Vec<(f64, u64, bool, f64)> = Vec::new();
    for r in table.rows().iter().filter(|r| r.arm == arm || r.arm.is_placebo()) {
        let tau = tau_from_outputs(&r.yhat, table.loss())?[&arm];
        pop.push((tau, r.id, r.arm == arm, outcome.value(r.y)));
    }
    if pop.is_empty() {
        return Err(Error::Metric(format!("no {arm} or placebo rows")));
    }
    pop.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = pop.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for rank in 0..n {
        members[rank * k / n].push(rank);
    }
    let make = |bin: usize, idx: &[usize]| {
        let taus: Vec<f64> = idx.iter().map(|&i| pop[i].0).collect();
        let (t, p): (Vec<&(f64, u64, bool, f64)>, Vec<_>) = idx.iter().map(|&i| &pop[i]).partition(|e| e.2);
        UpliftBin::new(bin, &taus, t.iter().map(|e| e.3).collect(), p.iter().map(|e| e.3).collect())
    };
    let bins: Vec<UpliftBin> = members.iter().enumerate().map(|(b, idx)| make(b, idx)).collect();
    let all: Vec<usize> = (0..n).collect();
    let whole_group = make(k, &all);
    let pairwise_p = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (i != j).then(|| bin_contrast(&bins[i], &bins[j]).ok().map(|t| t.p)).flatten())
                .collect()
        })
        .collect();
    let top_vs_bottom = bin_contrast(&bins[0], &bins[k - 1]).ok();
    Ok(UpliftReport {
        arm,
        k,
        outcome,
        bins,
        whole_group,
        pairwise_p,
        top_vs_bottom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::table::tests::row;
    use crate::nn::LossKind;

    /// 12 rows; τ̂ is set through the LE head with placebo fixed at log(1+0) = 0.
    fn toy() -> PredictionTable {
        let spec: [(Arm, f64, i64); 12] = [
            (Arm::LE, -0.9, 0),
            (Arm::Placebo, -0.8, 4),
            (Arm::LE, -0.7, 1),
            (Arm::Placebo, -0.6, 6),
            (Arm::LE, -0.2, 2),
            (Arm::Placebo, -0.1, 3),
            (Arm::LE, 0.0, 5),
            (Arm::Placebo, 0.1, 1),
            (Arm::LE, 0.5, 4),
            (Arm::Placebo, 0.6, 2),
            (Arm::LE, 0.8, 6),
            (Arm::Placebo, 0.9, 3),
        ];
        let rows = spec
            .iter()
            .enumerate()
            .map(|(i, (arm, tau, y))| {
                // count(LE) = tau + 1 when placebo count = 1 (log 2)
                row(i as u64, *arm, *y, &[(Arm::Placebo, 2f64.ln()), (Arm::LE, (2.0 + tau).ln())])
            })
            .collect();
        PredictionTable::new(vec![Arm::Placebo, Arm::LE], LossKind::LogCountMSE, rows).unwrap()
    }

    #[test]
    fn toy_table_tertiles() {
        let r = uplift_bins(&toy(), Arm::LE, 3, UpliftOutcome::Count).unwrap();
        // tertiles by rank: rows 0-3, 4-7, 8-11
        let diffs: Vec<f64> = r.bins.iter().map(|b| b.difference.unwrap()).collect();
        assert_eq!(diffs, vec![0.5 - 5.0, 3.5 - 2.0, 5.0 - 2.5]);
        assert_eq!(r.whole_group.difference.unwrap(), 3.0 - 19.0 / 6.0);
        assert_eq!(r.bins.iter().map(|b| b.n_treated + b.n_placebo).sum::<usize>(), 12);
        let tvb = r.top_vs_bottom.unwrap();
        assert!((tvb.estimate - (-4.5 - 2.5)).abs() < 1e-12);
    }

    #[test]
    fn meda_outcome_uses_frequencies() {
        let r = uplift_bins(&toy(), Arm::LE, 3, UpliftOutcome::Meda).unwrap();
        // bin 0: LE y {0,1} → 1.0; placebo y {4,6} → 0.0
        assert_eq!(r.bins[0].difference, Some(1.0));
    }

    #[test]
    fn empty_cells_are_marked_unusable() {
        let r = uplift_bins(&toy(), Arm::LE, 10, UpliftOutcome::Count).unwrap();
        assert!(r.bins.iter().any(|b| !b.usable()));
        assert_eq!(r.bins.iter().map(|b| b.n_treated + b.n_placebo).sum::<usize>(), 12);
    }

    #[test]
    fn invalid_requests() {
        assert!(uplift_bins(&toy(), Arm::Placebo, 3, UpliftOutcome::Count).is_err());
        assert!(uplift_bins(&toy(), Arm::LE, 4, UpliftOutcome::Count).is_err());
        assert!(uplift_bins(&toy(), Arm::HE, 3, UpliftOutcome::Count).is_err());
    }
}
