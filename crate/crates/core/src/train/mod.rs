// SPDX-License-Identifier: MIT OR Apache-2.0

//! Loss, gradients, optimizer, freeze constraints and the training loop.

mod control;
mod freeze;
mod grad;
mod optim;
mod trainer;

pub use control::{lambda_controller, LambdaController};
pub use freeze::{normalize_rows, project_soft_frozen, FreezeSpec};
pub use grad::{
    backward, cache_loss, forward_train, loss, mse, ForwardCache, Grads, LossParts, Penalty,
};
pub use optim::{adamw_step, AdamWConfig, OptimizerState, Tensor};
pub use trainer::{
    train, DataSource, DriftSnapshot, DumpSource, IntervalRecord, StepRecord, SyntheticSource,
    TrainConfig, TrainReport, Trainer,
};
