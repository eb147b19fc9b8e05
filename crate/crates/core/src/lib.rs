// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse autoencoders on superposition toy data.
//!
//! Trains ReLU, JumpReLU, TopK, BatchTopK and Matryoshka autoencoders, with
//! optional frozen-random decoder or encoder baselines, and scores them
//! against the ground-truth dictionary that generated the data.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod sae;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use eval::EvalReport;
pub use experiment::ExperimentConfig;
pub use linalg::{Matrix, Rng};
pub use sae::{Arch, FreezeMode, InitScheme, SaeConfig, SaeModel};
pub use synthetic::{GroundTruth, Regime, SyntheticConfig};
pub use train::{TrainConfig, TrainReport};
