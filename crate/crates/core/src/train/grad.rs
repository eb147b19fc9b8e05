// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training objective and its hand-derived gradients.
//!
//! With `G_p = 2(x̂_p − x)/B` the reconstruction gradient of prefix `p`
//! (a single prefix except for Matryoshka), a latent `j` in group `g` sees
//! the upstream signal `U_g = Σ_{p ≥ g} G_p`. Then
//!
//! * `∂L/∂z_ij = ⟨U_g,i, d_j⟩` (+ `λ/B` under the L1 penalty),
//! * `∂L/∂d_j = Σ_i z_ij · U_g,i`, `∂L/∂b_dec = Σ_i U_0,i`,
//! * `∂L/∂P_ij = ∂L/∂z_ij` on kept entries and 0 elsewhere,
//! * `∂L/∂w_enc_j = Σ_i ∂L/∂P_ij · x_i`, `∂L/∂b_enc_j = Σ_i ∂L/∂P_ij`.
//!
//! JumpReLU thresholds use a rectangle-kernel straight-through estimator of
//! bandwidth ε: `∂z/∂θ = −(θ/ε)·1[|P − θ| ≤ ε/2]` on the value path and
//! `∂L0/∂θ = −(1/ε)·1[|P − θ| ≤ ε/2]` on the L0 penalty path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, matmul, Matrix};
use crate::sae::{
    activate_sparse, decode_prefixes_codes, encode_pre, Arch, Codes, FreezeMode, Mode, SaeModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L0Ste,
    None,
}

impl Penalty {
    /// Penalty each architecture trains with.
    pub fn for_arch(arch: Arch) -> Penalty {
        match arch {
            Arch::Relu => Penalty::L1,
            Arch::JumpRelu => Penalty::L0Ste,
            Arch::TopK | Arch::BatchTopK | Arch::Matryoshka => Penalty::None,
        }
    }
}

/// Intermediates of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    pub pre: Matrix,
    pub codes: Codes,
    /// Reconstruction from each latent prefix; the last uses every latent.
    pub recons: Vec<Matrix>,
    pub bounds: Vec<usize>,
    /// Smallest activation kept by batch-level selection.
    pub min_selected: Option<f64>,
}

impl ForwardCache {
    pub fn reconstruction(&self) -> &Matrix {
        self.recons.last().expect("at least one prefix")
    }
}

pub fn forward_train(model: &SaeModel, x: &Matrix) -> Result<ForwardCache> {
    let pre = encode_pre(model, x)?;
    let act = activate_sparse(model, &pre, Mode::Train)?;
    let bounds = model.boundaries();
    let recons = decode_prefixes_codes(model, &act.codes, &bounds)?;
    Ok(ForwardCache {
        version: model.version(),
        pre,
        codes: act.codes,
        recons,
        bounds,
        min_selected: act.min_selected,
    })
}

/// `mean_i ‖x_i − x̂_i‖²`
pub fn mse(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    x.check_same_shape(x_hat)?;
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (a, b) in x.as_slice().iter().zip(x_hat.as_slice()) {
        s += (a - b) * (a - b);
    }
    Ok(s / x.rows() as f64)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Batch mean of `‖x − x̂‖²` plus `λ` times the batch mean of the penalty
/// on `z` (`Σ|z|` for L1, the nonzero count for L0).
pub fn loss(x: &Matrix, x_hat: &Matrix, z: &Matrix, lambda: f64, penalty: Penalty) -> Result<f64> {
    check_lambda(lambda)?;
    if z.rows() != x.rows() {
        return Err(Error::shape("codes and inputs differ in batch size"));
    }
    let recon = mse(x, x_hat)?;
    let rows = x.rows().max(1) as f64;
    let pen = match penalty {
        Penalty::None => 0.0,
        Penalty::L1 => z.as_slice().iter().map(|v| v.abs()).sum::<f64>() / rows,
        Penalty::L0Ste => z.as_slice().iter().filter(|v| **v != 0.0).count() as f64 / rows,
    };
    Ok(recon + lambda * pen)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Sum over prefixes of the batch-mean squared error.
    pub reconstruction: f64,
    /// Batch-mean penalty before scaling by λ.
    pub penalty: f64,
    pub total: f64,
}

/// Objective of a cached forward pass, summing every prefix reconstruction.
pub fn cache_loss(
    x: &Matrix,
    cache: &ForwardCache,
    lambda: f64,
    penalty: Penalty,
) -> Result<LossParts> {
    check_lambda(lambda)?;
    let mut reconstruction = 0.0;
    for r in &cache.recons {
        reconstruction += mse(x, r)?;
    }
    let rows = x.rows().max(1) as f64;
    let pen = match penalty {
        Penalty::None => 0.0,
        Penalty::L1 => {
            let mut s = 0.0;
            for r in 0..cache.codes.rows() {
                for (_, v) in cache.codes.row(r) {
                    s += v.abs();
                }
            }
            s / rows
        }
        Penalty::L0Ste => cache.codes.nnz() as f64 / rows,
    };
    Ok(LossParts {
        reconstruction,
        penalty: pen,
        total: reconstruction + lambda * pen,
    })
}

/// Gradients for every tensor; frozen tensors are left at exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    pub w_dec: Matrix,
    pub b_dec: Vec<f64>,
    pub theta: Option<Vec<f64>>,
}

pub fn backward(
    model: &SaeModel,
    x: &Matrix,
    cache: &ForwardCache,
    lambda: f64,
    penalty: Penalty,
    freeze: FreezeMode,
    ste_bandwidth: f64,
) -> Result<Grads> {
    if cache.version != model.version() {
        return Err(Error::State(format!(
            "forward cache from model version {} used with version {}",
            cache.version,
            model.version()
        )));
    }
    check_lambda(lambda)?;
    let (b, n, m) = (x.rows(), model.n(), model.m());
    if cache.pre.shape() != (b, m) || x.cols() != n {
        return Err(Error::State(
            "forward cache does not match the batch".into(),
        ));
    }
    if !(ste_bandwidth > 0.0) {
        return Err(Error::param("STE bandwidth must be > 0"));
    }
    let inv_b = 1.0 / b.max(1) as f64;

    // upstream signal per group: suffix sums of the prefix gradients
    let mut ups: Vec<Matrix> = Vec::with_capacity(cache.recons.len());
    for r in &cache.recons {
        let mut g = r.sub(x)?;
        g.scale(2.0 * inv_b);
        ups.push(g);
    }
    for p in (0..ups.len().saturating_sub(1)).rev() {
        let (head, tail) = ups.split_at_mut(p + 1);
        for (a, c) in head[p].as_mut_slice().iter_mut().zip(tail[0].as_slice()) {
            *a += c;
        }
    }
    let group_of = |j: usize| cache.bounds.iter().position(|&e| j < e).unwrap_or(0);

    let train_enc = freeze != FreezeMode::FrozenEncoder;
    let train_dec = freeze != FreezeMode::FrozenDecoder;
    let mut g_w_enc = Matrix::zeros(m, n);
    let mut g_b_enc = vec![0.0; m];
    let mut g_w_dec = Matrix::zeros(m, n);
    let mut g_b_dec = vec![0.0; n];
    for row in ups[0].row_iter() {
        for (acc, v) in g_b_dec.iter_mut().zip(row) {
            *acc += v;
        }
    }

    let l1_term = if penalty == Penalty::L1 {
        lambda * inv_b
    } else {
        0.0
    };
    let dense = cache.recons.len() == 1 && cache.codes.density() > DENSE_CODES;
    if dense {
        dense_code_grads(
            model,
            x,
            cache,
            &ups[0],
            l1_term,
            freeze,
            &mut g_w_enc,
            &mut g_b_enc,
            &mut g_w_dec,
        )?;
    } else {
        for i in 0..b {
            let xi = x.row(i);
            for (j, z) in cache.codes.row(i) {
                let u = ups[group_of(j)].row(i);
                let dz = dot(u, model.w_dec.row(j)) + l1_term;
                if train_dec {
                    axpy(z, u, g_w_dec.row_mut(j));
                }
                g_b_enc[j] += dz;
                if train_enc {
                    axpy(dz, xi, g_w_enc.row_mut(j));
                }
            }
        }
    }

    let g_theta = match (model.arch(), model.theta()) {
        (Arch::JumpRelu, Some(theta)) => {
            let half = 0.5 * ste_bandwidth;
            let inv_eps = 1.0 / ste_bandwidth;
            let l0_term = if penalty == Penalty::L0Ste {
                -lambda * inv_b * inv_eps
            } else {
                0.0
            };
            let mut g = vec![0.0; m];
            for i in 0..b {
                let u = ups[0].row(i);
                for (j, (&p, &t)) in cache.pre.row(i).iter().zip(theta).enumerate() {
                    if (p - t).abs() <= half {
                        let dz = dot(u, model.w_dec.row(j));
                        g[j] += dz * (-t * inv_eps) + l0_term;
                    }
                }
            }
            Some(g)
        }
        _ => None,
    };

    Ok(Grads {
        w_enc: g_w_enc,
        b_enc: g_b_enc,
        w_dec: g_w_dec,
        b_dec: g_b_dec,
        theta: g_theta,
    })
}

/// Above this fraction of nonzero codes, gradients go through dense
/// products instead of per-entry loops.
pub(crate) const DENSE_CODES: f64 = 0.1;

// Dense form of the per-entry loop: `dZ = U·W_decᵀ` masked to the support,
// `∂W_dec = Zᵀ·U`, `∂W_enc = dPᵀ·X`.
#[allow(clippy::too_many_arguments)]
fn dense_code_grads(
    model: &SaeModel,
    x: &Matrix,
    cache: &ForwardCache,
    u: &Matrix,
    l1_term: f64,
    freeze: FreezeMode,
    g_w_enc: &mut Matrix,
    g_b_enc: &mut [f64],
    g_w_dec: &mut Matrix,
) -> Result<()> {
    let dz_all = matmul(u, &model.w_dec, false, true)?;
    let (b, m) = dz_all.shape();
    let mut dp = Matrix::zeros(b, m);
    for i in 0..b {
        let src = dz_all.row(i);
        let dst = dp.row_mut(i);
        for (j, _) in cache.codes.row(i) {
            dst[j] = src[j] + l1_term;
        }
    }
    for row in dp.row_iter() {
        for (acc, v) in g_b_enc.iter_mut().zip(row) {
            *acc += v;
        }
    }
    if freeze != FreezeMode::FrozenDecoder {
        *g_w_dec = matmul(&cache.codes.to_dense(), u, true, false)?;
    }
    if freeze != FreezeMode::FrozenEncoder {
        *g_w_enc = matmul(&dp, x, true, false)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::SaeModel;

    fn rows(r: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(r).unwrap()
    }

    #[test]
    fn perfect_reconstruction_zero_loss() {
        let x = rows(&[vec![1.0, 2.0]]);
        assert_eq!(
            loss(&x, &x, &Matrix::zeros(1, 3), 0.7, Penalty::L1).unwrap(),
            0.0
        );
    }

    #[test]
    fn hand_computed_l1_loss() {
        let x = rows(&[vec![1.0, 0.0]]);
        let xh = rows(&[vec![0.0, 0.0]]);
        let z = rows(&[vec![2.0]]);
        assert_eq!(loss(&x, &xh, &z, 0.5, Penalty::L1).unwrap(), 2.0);
        assert!(matches!(
            loss(&x, &xh, &z, -0.1, Penalty::L1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let x = rows(&[vec![0.3, -1.2, 2.0], vec![1.0, 0.5, -0.7]]);
        let xh = rows(&[vec![0.1, -1.0, 1.5], vec![0.9, 0.0, -0.2]]);
        let z = rows(&[vec![0.0, 1.5], vec![0.2, 0.0]]);
        let mut expect = 0.0;
        for i in 0..2 {
            for d in 0..3 {
                expect += (x.get(i, d) - xh.get(i, d)).powi(2) / 2.0;
            }
        }
        let l1 = expect + 0.1 * (1.5 + 0.2) / 2.0;
        let l0 = expect + 0.1 * 2.0 / 2.0;
        assert!((loss(&x, &xh, &z, 0.1, Penalty::L1).unwrap() - l1).abs() < 1e-15);
        assert!((loss(&x, &xh, &z, 0.1, Penalty::L0Ste).unwrap() - l0).abs() < 1e-15);
        assert!((loss(&x, &xh, &z, 0.1, Penalty::None).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_input_fixed_point() {
        let (m, n) = (4, 3);
        let mut w = Matrix::zeros(m, n);
        for j in 0..m {
            w.set(j, j % n, 1.0);
        }
        let model = SaeModel::from_parts(
            Arch::Relu,
            w.clone(),
            vec![0.0; m],
            w,
            vec![0.0; n],
            None,
            2,
            vec![1.0],
            None,
        )
        .unwrap();
        let x = Matrix::zeros(5, n);
        let cache = forward_train(&model, &x).unwrap();
        let g = backward(&model, &x, &cache, 0.3, Penalty::L1, FreezeMode::None, 1e-3).unwrap();
        assert!(g.w_enc.as_slice().iter().all(|v| *v == 0.0));
        assert!(g.w_dec.as_slice().iter().all(|v| *v == 0.0));
        assert!(g.b_enc.iter().chain(&g.b_dec).all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let model_cfg = crate::sae::SaeConfig {
            n: 3,
            expansion: 2,
            k_target: 2,
            ..Default::default()
        };
        let mut model =
            crate::sae::init_model(&model_cfg, &mut crate::linalg::Rng::new(0), None).unwrap();
        let x = rows(&[vec![1.0, 0.0, 0.5], vec![0.2, 0.1, 0.0]]);
        let cache = forward_train(&model, &x).unwrap();
        model.params_mut().b_dec[0] = 0.1;
        let err = backward(
            &model,
            &x,
            &cache,
            0.0,
            Penalty::None,
            FreezeMode::None,
            1e-3,
        );
        assert!(matches!(err, Err(Error::State(_))));
    }
}
