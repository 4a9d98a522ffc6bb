use super::table::PredictionTable;
use crate::nn::LossKind;
use crate::util::sigmoid;
use crate::{Arm, Error, Result};

fn check(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!("{} labels, {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }
    Ok(())
}

/// Step-wise average precision `Σ (Rₙ − Rₙ₋₁) Pₙ` over descending score
/// thresholds, with tied scores forming a single threshold.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check(labels, scores)?;
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(Error::Metric("average precision is undefined without positive labels".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(labels[order[i]]);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mann–Whitney ROC-AUC using average ranks, so ties count one half.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check(labels, scores)?;
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// MEDA labels and scores for the factual rows of `arm`. Regression heads are
/// scored by minus the predicted log count, classification heads by `σ(logit)`.
pub fn meda_score(table: &PredictionTable, arm: Arm) -> (Vec<bool>, Vec<f64>) {
    table
        .arm_rows(arm)
        .map(|r| {
            let s = match table.loss() {
                LossKind::LogCountMSE => -r.factual(),
                LossKind::MedaBCE => sigmoid(r.factual()),
            };
            (r.meda(), s)
        })
        .unzip()
}
