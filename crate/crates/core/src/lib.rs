//! Multi-treatment conditional average treatment effect (CATE) estimation.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense layers, activations, dropout, losses and AdamW.
//! - [`sim`]: synthetic multi-arm randomized cohorts with exact potential-outcome oracles.
//! - [`model`]: the shared-trunk, multi-head potential-outcome network.
//! - [`cv`]: 4×4 nested cross-validation with inner-fold ensembling.
//! - [`cate`]: CATE profiles, risk-adjusted CATE and recommendations.
//! - [`eval`]: AP / ROC-AUC, regression metrics, uplift bins, Welch tests, policy curves.
//! - [`pipeline`]: simulate → nested CV → evaluate, as used by the CLI.

pub mod arm;
pub mod cate;
pub mod cv;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod util;

pub use arm::Arm;
pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
