use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts strictly below this are minimal evidence of disease activity (MEDA).
pub const MEDA_THRESHOLD: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Squared error between the output and `ln(1 + y)`.
    #[serde(rename = "log-mse")]
    LogCountMSE,
    /// Binary cross-entropy of the output logit against `I(y < 3)`.
    #[serde(rename = "meda-bce")]
    MedaBCE,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::LogCountMSE => "log-mse",
            LossKind::MedaBCE => "meda-bce",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-mse" => Ok(LossKind::LogCountMSE),
            "meda-bce" => Ok(LossKind::MedaBCE),
            other => Err(Error::Config(format!("unknown loss '{other}' (expected log-mse|meda-bce)"))),
        }
    }
}

pub fn meda_label(count: i64) -> bool {
    count < MEDA_THRESHOLD
}

/// Per-sample loss and its derivative with respect to the prediction.
pub fn loss_and_grad(kind: LossKind, prediction: f64, target_count: i64) -> Result<(f64, f64)> {
    if target_count < 0 {
        return Err(Error::Data(format!("negative target count {target_count}")));
    }
    match kind {
        LossKind::LogCountMSE => {
            let residual = prediction - (target_count as f64).ln_1p();
            Ok((residual * residual, 2.0 * residual))
        }
        LossKind::MedaBCE => {
            let label = if meda_label(target_count) { 1.0 } else { 0.0 };
            // softplus(z) - label·z, written so exp never overflows
            let z = prediction;
            let loss = z.max(0.0) - label * z + (-z.abs()).exp().ln_1p();
            Ok((loss, crate::util::sigmoid(z) - label))
        }
    }
}
