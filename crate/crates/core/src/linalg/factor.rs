// SPDX-License-Identifier: MIT OR Apache-2.0

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular `L` with `L·Lᵀ = a` for a symmetric positive
/// *semi*definite `a`.
///
/// Pivots within `tol · max|a_ii|` of zero are treated as exact zeros and
/// their column of `L` is left empty, so rank-deficient covariances factor
/// cleanly. A pivot below that band means `a` is not PSD.
pub fn psd_cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(format!(
            "cholesky of non-square {}x{}",
            n,
            a.cols()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a.get(i, j), a.get(j, i));
            if (x - y).abs() > 1e-9 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::Data(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d < -tol * 1e3 {
            return Err(Error::Data(format!(
                "matrix is not positive semidefinite (pivot {d:e} at {j})"
            )));
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l.set(j, j, pivot);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / pivot);
        }
    }
    Ok(l)
}
