//! Minimal feed-forward network engine.
//!
//! Parameters are stored as `f32`; every forward and backward computation runs
//! in `f64`. Backpropagation is written layer by layer for the fixed MLP stacks
//! used by the multi-head model, so there is no general autodiff graph.

mod gradcheck;
mod layer;
mod loss;
mod mlp;
mod optim;

pub use gradcheck::{finite_diff_gradcheck, GradCheckReport, GradCheckTarget, MlpSample};
pub use layer::{dense_forward, dropout_apply, dropout_mask, leaky_relu, Activation, DenseGrads, DenseLayer};
pub use loss::{loss_and_grad, meda_label, LossKind, MEDA_THRESHOLD};
pub use mlp::{LayerSpec, Mlp, MlpGrads, MlpTrace, ParamLocation};
pub use optim::{adamw_step, AdamWConfig, MlpOptimizer, OptimizerState};
