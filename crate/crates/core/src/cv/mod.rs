//! Nested cross-validation with inner-fold ensembling.

mod ensemble;
mod plan;
mod run;

pub use ensemble::EnsemblePrediction;
pub use plan::{make_fold_plan, FoldOptions, FoldPlan};
pub use run::{collect_outer_predictions, run_nested_cv, CvMember, CvRun, FoldPredictions, MemberProvenance, Provenance};
