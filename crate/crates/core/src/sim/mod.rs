//! Synthetic multi-arm randomized cohorts with exact potential-outcome oracles.
//!
//! Every patient gets a feature vector, a randomly assigned arm, and Poisson
//! potential outcomes `Y(t) ~ Poisson(exp(η₀(x) + δₜ(x)))` for *all* arms,
//! drawn comonotonically from one shared uniform. Only the assigned arm's
//! outcome reaches the model-facing records table.

mod calibrate;
mod config;
mod generate;
mod io;
mod schema;

pub use calibrate::{calibrate_intercepts, ArmCalibration, CalibrationReport, PROBE_SIZE};
pub use config::{ArmEffect, BaselineModel, ClinicalMarginals, SimConfig};
pub use generate::{cate_from_log_means, poisson_quantile, simulate_cohort, true_cate, OracleCohort, OracleRow, PatientRecord};
pub use io::{export_cohort, read_oracle, read_records, write_oracle, write_records, CohortPaths};
pub use schema::FeatureSchema;
