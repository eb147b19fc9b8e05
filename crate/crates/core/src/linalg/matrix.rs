// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major `f64` matrices and the matrix product kernel.
//!
//! The product kernel accumulates every output entry as
//! `((0 + a[i,0]·b[0,j]) + a[i,1]·b[1,j]) + …` in increasing inner index,
//! with separate multiply and add (no fused multiply-add). That is the same
//! order as the textbook triple loop, so results are bit-identical to it and
//! independent of how output rows are split across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Rejects wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at row {}, col {}",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    /// Column vector from a slice.
    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Matrix::from_vec(values.len(), 1, values.to_vec())
    }

    /// Row vector from a slice.
    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Matrix::from_vec(1, values.len(), values.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so a zero-width matrix yields empty rows.
        let cols = self.cols;
        (0..self.rows).map(move |r| &self.data[r * cols..(r + 1) * cols])
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.row_iter().map(norm).collect()
    }

    /// Euclidean norm of each column, accumulated top to bottom.
    pub fn column_norms(&self) -> Vec<f64> {
        self.column_sq_norms().into_iter().map(f64::sqrt).collect()
    }

    pub fn column_sq_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (s, v) in sq.iter_mut().zip(row) {
                *s = v.mul_add(*v, *s);
            }
        }
        sq
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "bias of length {} against {} columns",
                bias.len(),
                self.cols
            )));
        }
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Per-column mean, accumulated top to bottom.
    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.rows as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s = x.mul_add(*y, s);
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of two vectors; 0 when either is zero.
///
/// The denominator is `sqrt(‖a‖²·‖b‖²)`, a single rounding, so parallel and
/// antipodal pairs give exactly ±1.
#[inline]
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_from_parts(dot(a, b), dot(a, a), dot(b, b))
}

#[inline]
fn cosine_from_parts(d: f64, sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == 0.0 || sq_b == 0.0 {
        0.0
    } else {
        (d / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0)
    }
}

/// `y += alpha * x`, one fused multiply-add per entry
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = alpha.mul_add(*xi, *yi);
    }
}

const MR: usize = 8;
const NR: usize = 16;
// Rows of `a` packed and processed together; the unit of parallel work.
const ROW_GROUP: usize = 128;
const PANEL_CHUNK_BYTES: usize = 512 * 1024;
// Below this many multiply-adds the product runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 20;

/// `op(a) · op(b)` where `op` optionally transposes its argument.
///
/// Every output entry is accumulated in ascending inner index with fused
/// multiply-adds, `s = a_ik.mul_add(b_kj, s)` starting from `s = 0`, the
/// same order as [`dot`]. Blocking and threading never change that order,
/// so results are identical for any thread count.
pub fn matmul(a: &Matrix, b: &Matrix, transpose_a: bool, transpose_b: bool) -> Result<Matrix> {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if transpose_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if k != kb {
        return Err(Error::shape(format!(
            "inner dimensions differ: {m}x{k} times {kb}x{n}"
        )));
    }
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }

    let panels = pack_b(b, transpose_b, k, n);
    let a_at = |i: usize, kk: usize| -> f64 {
        if transpose_a {
            a.data[kk * a.cols + i]
        } else {
            a.data[i * a.cols + kk]
        }
    };

    let group = |(g, out_rows): (usize, &mut [f64])| {
        let i0 = g * ROW_GROUP;
        let live_rows = out_rows.len() / n;
        let blocks = live_rows.div_ceil(MR);
        let mut packed_a = vec![0.0; blocks * k * MR];
        for blk in 0..blocks {
            let dst = &mut packed_a[blk * k * MR..(blk + 1) * k * MR];
            let rows_here = MR.min(live_rows - blk * MR);
            for kk in 0..k {
                for r in 0..rows_here {
                    dst[kk * MR + r] = a_at(i0 + blk * MR + r, kk);
                }
            }
        }
        let mut edge = [0.0f64; MR * NR];
        // panels per chunk, sized so a chunk of `b` stays in cache while
        // every block of the group sweeps it
        let chunk = (PANEL_CHUNK_BYTES / (k * NR * 8)).max(1);
        let all: Vec<&[f64]> = panels.chunks_exact(k * NR).collect();
        for (c, chunk_panels) in all.chunks(chunk).enumerate() {
            for blk in 0..blocks {
                let a_blk = &packed_a[blk * k * MR..(blk + 1) * k * MR];
                for (q, panel) in chunk_panels.iter().enumerate() {
                    let j0 = (c * chunk + q) * NR;
                    let live_cols = NR.min(n - j0);
                    let rows_here = MR.min(live_rows - blk * MR);
                    let o = blk * MR * n + j0;
                    if rows_here == MR && live_cols == NR {
                        micro_kernel(a_blk, panel, k, &mut out_rows[o..], n);
                    } else {
                        micro_kernel(a_blk, panel, k, &mut edge, NR);
                        for r in 0..rows_here {
                            out_rows[o + r * n..o + r * n + live_cols]
                                .copy_from_slice(&edge[r * NR..r * NR + live_cols]);
                        }
                    }
                }
            }
        }
    };

    if m * n * k >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        out.data
            .par_chunks_mut(ROW_GROUP * n)
            .enumerate()
            .for_each(group);
    } else {
        out.data
            .chunks_mut(ROW_GROUP * n)
            .enumerate()
            .for_each(group);
    }
    Ok(out)
}

/// Packs `op(b)` (k × n) into zero-padded column panels of width `NR`,
/// each stored k-major.
fn pack_b(b: &Matrix, transpose_b: bool, k: usize, n: usize) -> Vec<f64> {
    let n_panels = n.div_ceil(NR);
    let mut packed = vec![0.0; n_panels * k * NR];
    for p in 0..n_panels {
        let j0 = p * NR;
        let live = NR.min(n - j0);
        let panel = &mut packed[p * k * NR..(p + 1) * k * NR];
        for kk in 0..k {
            let dst = &mut panel[kk * NR..kk * NR + live];
            if transpose_b {
                for (c, d) in dst.iter_mut().enumerate() {
                    *d = b.data[(j0 + c) * b.cols + kk];
                }
            } else {
                dst.copy_from_slice(&b.data[kk * b.cols + j0..kk * b.cols + j0 + live]);
            }
        }
    }
    packed
}

/// Writes the `MR × NR` tile `packed_a · panel` into `out`, whose rows are
/// `stride` apart.
fn micro_kernel(packed_a: &[f64], panel: &[f64], k: usize, out: &mut [f64], stride: usize) {
    assert!(packed_a.len() >= k * MR && panel.len() >= k * NR);
    assert!(stride >= NR && out.len() >= (MR - 1) * stride + NR);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature checked above, slice lengths asserted.
            unsafe { micro_kernel_avx512(packed_a, panel, k, out, stride) };
            return;
        }
    }
    micro_kernel_generic(packed_a, panel, k, out, stride)
}

#[inline(always)]
fn micro_kernel_generic(packed_a: &[f64], panel: &[f64], k: usize, out: &mut [f64], stride: usize) {
    let mut acc = [[0.0f64; NR]; MR];
    for (av, bv) in packed_a
        .chunks_exact(MR)
        .zip(panel.chunks_exact(NR))
        .take(k)
    {
        let av: &[f64; MR] = av.try_into().unwrap();
        let bv: &[f64; NR] = bv.try_into().unwrap();
        for r in 0..MR {
            let ar = av[r];
            for c in 0..NR {
                acc[r][c] = ar.mul_add(bv[c], acc[r][c]);
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        out[r * stride..r * stride + NR].copy_from_slice(row);
    }
}

// Same arithmetic as the generic kernel: one fused multiply-add per term in
// ascending `kk`, so both produce identical bits.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn micro_kernel_avx512(
    packed_a: &[f64],
    panel: &[f64],
    k: usize,
    out: &mut [f64],
    stride: usize,
) {
    use std::arch::x86_64::*;
    let pa = packed_a.as_ptr();
    let pb = panel.as_ptr();
    let po = out.as_mut_ptr();
    let mut c = [_mm512_setzero_pd(); 2 * MR];
    for kk in 0..k {
        let b0 = _mm512_loadu_pd(pb.add(kk * NR));
        let b1 = _mm512_loadu_pd(pb.add(kk * NR + 8));
        for r in 0..MR {
            let a = _mm512_set1_pd(*pa.add(kk * MR + r));
            c[2 * r] = _mm512_fmadd_pd(a, b0, c[2 * r]);
            c[2 * r + 1] = _mm512_fmadd_pd(a, b1, c[2 * r + 1]);
        }
    }
    for r in 0..MR {
        _mm512_storeu_pd(po.add(r * stride), c[2 * r]);
        _mm512_storeu_pd(po.add(r * stride + 8), c[2 * r + 1]);
    }
}

/// Cosine similarity between every column of `a` and every column of `b`.
///
/// Entry `(i, j)` is `⟨a_i, b_j⟩ / (‖a_i‖·‖b_j‖)`, clamped to `[-1, 1]`.
/// A zero column scores 0 against everything and is logged.
pub fn column_cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(format!(
            "column length {} vs {}",
            a.rows, b.rows
        )));
    }
    let dots = matmul(a, b, true, false)?;
    let na = a.column_sq_norms();
    let nb = b.column_sq_norms();
    Ok(cosines_from_dots(dots, &na, &nb, "column"))
}

/// Same as [`column_cosine_matrix`] with vectors stored as rows.
pub fn row_cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(format!("row length {} vs {}", a.cols, b.cols)));
    }
    let dots = matmul(a, b, false, true)?;
    let na: Vec<f64> = a.row_iter().map(|r| dot(r, r)).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| dot(r, r)).collect();
    Ok(cosines_from_dots(dots, &na, &nb, "row"))
}

// `na`, `nb` are squared norms.
fn cosines_from_dots(mut dots: Matrix, na: &[f64], nb: &[f64], what: &str) -> Matrix {
    let zero_a = na.iter().filter(|v| **v == 0.0).count();
    let zero_b = nb.iter().filter(|v| **v == 0.0).count();
    if zero_a + zero_b > 0 {
        log::warn!(
            "cosine: {} zero {what}(s) in first operand, {} in second; scored as 0",
            zero_a,
            zero_b
        );
    }
    let q = dots.cols;
    for (i, &ni) in na.iter().enumerate() {
        for (j, &nj) in nb.iter().enumerate() {
            let v = &mut dots.data[i * q + j];
            *v = cosine_from_parts(*v, ni, nj);
        }
    }
    dots
}
