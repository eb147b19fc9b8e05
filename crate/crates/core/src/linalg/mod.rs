// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense linear algebra and seeded sampling.

mod factor;
mod matrix;
mod rng;

pub use factor::psd_cholesky;

pub use matrix::{
    axpy, column_cosine_matrix, cosine, dot, matmul, norm, row_cosine_matrix, Matrix,
};
pub use rng::{
    derive_seed, fill_unit_sphere, sample_lognormal, sample_loguniform, sample_unit_sphere,
    LogNormalSampler, Rng,
};
