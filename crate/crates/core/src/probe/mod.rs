//! Lasso-logistic conflict probes.
//!
//! [`solver`] holds the optimizer on an already standardized design,
//! [`model`] wraps it with feature standardization and persistence, and
//! [`sweep`] trains one probe per (layer, activation kind).

mod matrix;
pub mod model;
pub mod solver;
pub mod sweep;

pub use matrix::Matrix;
pub use model::{
    evaluate, predict_proba, train_lasso_logistic, Evaluation, LassoLogistic, ProbeModel,
    StandardizationStats, TrainMeta,
};
pub use solver::{
    lambda_max, logistic_loss_grad, objective, prox_grad, soft_threshold, LossGrad, SolveOutput,
    StepPolicy, TrainConfig,
};
pub use sweep::{
    layerwise_sweep, select_lambda, LambdaChoice, LambdaSelection, SweepCell, SweepConfig,
    SweepResult,
};
