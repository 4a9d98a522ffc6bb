//! Shared-trunk, multi-head potential-outcome network.
//!
//! A tabular trunk (dense + LeakyReLU + dropout) feeds one MLP head per arm.
//! With [`FeatureSet::All`], imaging-derived columns go through the trunk and
//! age/sex/EDSS are concatenated to the trunk output before the heads.

mod config;
mod file;
mod gradcheck;
mod net;
mod train;

pub use config::{FeatureRouting, FeatureSet, ModelSpec, TrainConfig};
pub use file::{load_model, save_model, FORMAT_VERSION};
pub use gradcheck::ModelSample;
pub use net::{init_model, ModelMetadata, MultiHeadNet, Normalization, PreparedSample};
pub use train::{fit, train_epoch, EpochRecord, EpochLoss, ModelOptimizer, TrainHistory};
