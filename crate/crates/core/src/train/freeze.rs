// SPDX-License-Identifier: MIT OR Apache-2.0

//! Frozen-random baselines: which tensors stay at initialization, and the
//! spherical-cap projection of the soft-frozen decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::sae::{FreezeMode, SaeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub mode: FreezeMode,
    pub tau: f64,
    w_dec_init: Matrix,
    /// Columns snapped back to their initial direction because they were
    /// exactly antipodal to it.
    pub antipodal_fallbacks: u64,
}

impl FreezeSpec {
    /// Snapshots the model's decoder before any training step.
    pub fn capture(model: &SaeModel, mode: FreezeMode, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::param(format!("tau must be in (0, 1], got {tau}")));
        }
        Ok(FreezeSpec {
            mode,
            tau,
            w_dec_init: model.w_dec().clone(),
            antipodal_fallbacks: 0,
        })
    }

    pub fn w_dec_init(&self) -> &Matrix {
        &self.w_dec_init
    }

    /// Projects every decoder direction back into the cap of cosine `tau`
    /// around its initial direction. Returns how many rows moved.
    pub fn project(&mut self, model: &mut SaeModel) -> Result<usize> {
        if self.mode != FreezeMode::SoftFrozenDecoder {
            return Err(Error::Mode(format!(
                "cap projection applies to soft_frozen_decoder, not {}",
                self.mode
            )));
        }
        let moved = project_soft_frozen(
            &mut model.w_dec,
            &self.w_dec_init,
            self.tau,
            &mut self.antipodal_fallbacks,
        )?;
        if moved > 0 {
            model.touch();
        }
        Ok(moved)
    }
}

/// Per row `d` with initial direction `d̂`: rows with `cos(d, d̂) ≥ τ` are left
/// alone; others become `‖d‖·(τ·d̂ + √(1−τ²)·u)` with `u` the unit component
/// of `d` orthogonal to `d̂`. A row with no orthogonal component (exactly
/// antipodal) is snapped onto `d̂` and counted in `fallbacks`.
pub fn project_soft_frozen(
    w_dec: &mut Matrix,
    w_dec_init: &Matrix,
    tau: f64,
    fallbacks: &mut u64,
) -> Result<usize> {
    w_dec.check_same_shape(w_dec_init)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::param(format!("tau must be in (0, 1], got {tau}")));
    }
    let n = w_dec.cols();
    let sin = (1.0 - tau * tau).max(0.0).sqrt();
    let mut moved = 0;
    let mut u = vec![0.0; n];
    for j in 0..w_dec.rows() {
        let init = w_dec_init.row(j);
        let init_len = norm(init);
        let d = w_dec.row_mut(j);
        let len = norm(d);
        if init_len == 0.0 || len == 0.0 {
            continue;
        }
        let along = dot(d, init) / init_len;
        if along / len >= tau {
            continue;
        }
        for ((ui, di), hi) in u.iter_mut().zip(d.iter()).zip(init) {
            *ui = di - along * hi / init_len;
        }
        let ortho = norm(&u);
        moved += 1;
        if ortho <= 1e-12 * len {
            *fallbacks += 1;
            log::warn!("decoder row {j} is antipodal to its initial direction; snapping back");
            for (di, hi) in d.iter_mut().zip(init) {
                *di = len * hi / init_len;
            }
            continue;
        }
        for ((di, hi), ui) in d.iter_mut().zip(init).zip(&u) {
            *di = len * (tau * hi / init_len + sin * ui / ortho);
        }
    }
    Ok(moved)
}

/// Rescales each row to unit norm; zero rows are left alone.
pub fn normalize_rows(w: &mut Matrix) {
    for j in 0..w.rows() {
        let row = w.row_mut(j);
        let len = norm(row);
        if len > 0.0 {
            row.iter_mut().for_each(|v| *v /= len);
        }
    }
}
