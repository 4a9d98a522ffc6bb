//! Evaluation analytics over pooled out-of-fold predictions.

mod classify;
mod histogram;
mod policy;
mod recovery;
mod regress;
mod report;
mod stats;
mod table;
mod uplift;

pub use classify::{average_precision, meda_score, roc_auc};
pub use histogram::count_histogram;
pub use policy::{policy_value_curve, PolicyPoint};
pub use recovery::{cate_recovery, CateRecovery};
pub use regress::{regression_metrics, RegressionMetrics};
pub use report::{evaluate, report_files, write_report, ArmMetrics, EvalOptions, EvaluationReport, REPORT_SCHEMA_VERSION};
pub use stats::{permutation_test, welch_contrast, welch_t, TTest};
pub use table::{PredictionRow, PredictionTable};
pub use uplift::{bin_contrast, uplift_bins, UpliftBin, UpliftOutcome, UpliftReport};
