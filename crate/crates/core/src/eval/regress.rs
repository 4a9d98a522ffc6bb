use serde::{Deserialize, Serialize};

use super::table::PredictionTable;
use crate::nn::LossKind;
use crate::{Arm, Error, Result};

/// Log-count errors of the factual head against the arm-mean baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub baseline_mse: f64,
    pub baseline_mae: f64,
}

pub fn regression_metrics(table: &PredictionTable, arm: Arm) -> Result<RegressionMetrics> {
    if table.loss() != LossKind::LogCountMSE {
        return Err(Error::Metric("log-count regression metrics need a log-mse table".into()));
    }
    let (targets, preds): (Vec<f64>, Vec<f64>) = table
        .arm_rows(arm)
        .map(|r| ((r.y as f64).ln_1p(), r.factual()))
        .unzip();
    let n = targets.len();
    if n < 2 {
        return Err(Error::Metric(format!("arm {arm} has {n} factual records; need at least 2")));
    }
    let base = crate::util::mean(&targets);
    let nf = n as f64;
    let err = |f: &dyn Fn(f64) -> f64| -> f64 { targets.iter().zip(&preds).map(|(t, p)| f(t - p)).sum::<f64>() / nf };
    Ok(RegressionMetrics {
        n,
        mse: err(&|d| d * d),
        mae: err(&|d| d.abs()),
        baseline_mse: targets.iter().map(|t| (t - base).powi(2)).sum::<f64>() / nf,
        baseline_mae: targets.iter().map(|t| (t - base).abs()).sum::<f64>() / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::table::tests::row;

    fn table(ys: &[i64], preds: &[f64]) -> PredictionTable {
        let rows = ys
            .iter()
            .zip(preds)
            .enumerate()
            .map(|(i, (y, p))| row(i as u64, Arm::ME, *y, &[(Arm::Placebo, 0.0), (Arm::ME, *p)]))
            .collect();
        PredictionTable::new(vec![Arm::Placebo, Arm::ME], LossKind::LogCountMSE, rows).unwrap()
    }

    #[test]
    fn perfect_predictions_have_zero_error() {
        let ys = [0, 3, 7, 1];
        let preds: Vec<f64> = ys.iter().map(|y| (*y as f64).ln_1p()).collect();
        let m = regression_metrics(&table(&ys, &preds), Arm::ME).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
    }

    #[test]
    fn baseline_mse_is_population_variance() {
        let ys = [0, 3, 7, 1, 12];
        let m = regression_metrics(&table(&ys, &[0.0; 5]), Arm::ME).unwrap();
        let logs: Vec<f64> = ys.iter().map(|y| (*y as f64).ln_1p()).collect();
        let var = crate::util::population_std(&logs).powi(2);
        assert!((m.baseline_mse - var).abs() < 1e-12);
    }

    #[test]
    fn constant_zero_arm_has_zero_baseline() {
        let m = regression_metrics(&table(&[0, 0, 0], &[0.0, 0.0, 0.0]), Arm::ME).unwrap();
        assert_eq!((m.baseline_mse, m.mse), (0.0, 0.0));
    }

    #[test]
    fn empty_arm_is_an_error() {
        assert!(regression_metrics(&table(&[1, 2], &[0.0, 0.0]), Arm::HE).is_err());
    }
}
