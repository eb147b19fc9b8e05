// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse autoencoder parameters and forward passes.
//!
//! Decoder directions are stored one per row: `w_dec` is `m × n` and row `j`
//! is the direction `d_j` that latent `j` writes into activation space. The
//! encoder `w_enc` is also `m × n`, so pre-activations are `X · w_encᵀ + b_enc`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, fill_unit_sphere, matmul, psd_cholesky, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Relu,
    #[serde(rename = "jumprelu")]
    JumpRelu,
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "batchtopk")]
    BatchTopK,
    Matryoshka,
}

impl Arch {
    pub const ALL: [Arch; 5] = [
        Arch::Relu,
        Arch::JumpRelu,
        Arch::TopK,
        Arch::BatchTopK,
        Arch::Matryoshka,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Relu => "relu",
            Arch::JumpRelu => "jumprelu",
            Arch::TopK => "topk",
            Arch::BatchTopK => "batchtopk",
            Arch::Matryoshka => "matryoshka",
        }
    }

    /// Architectures whose sparsity comes from a selection rule rather than
    /// a penalty.
    pub fn is_structural(self) -> bool {
        matches!(self, Arch::TopK | Arch::BatchTopK | Arch::Matryoshka)
    }

    /// Batch-level selection in training, learned threshold at inference.
    pub fn uses_batch_threshold(self) -> bool {
        matches!(self, Arch::BatchTopK | Arch::Matryoshka)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Directions uniform on the unit sphere.
    Iso,
    /// Directions drawn from N(0, Σ) of the data, then normalized.
    Cov,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    None,
    FrozenDecoder,
    SoftFrozenDecoder,
    FrozenEncoder,
}

impl FreezeMode {
    pub const ALL: [FreezeMode; 4] = [
        FreezeMode::None,
        FreezeMode::FrozenDecoder,
        FreezeMode::SoftFrozenDecoder,
        FreezeMode::FrozenEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FreezeMode::None => "none",
            FreezeMode::FrozenDecoder => "frozen_decoder",
            FreezeMode::SoftFrozenDecoder => "soft_frozen_decoder",
            FreezeMode::FrozenEncoder => "frozen_encoder",
        }
    }
}

impl std::fmt::Display for FreezeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeConfig {
    pub arch: Arch,
    pub n: usize,
    /// Dictionary size over input dimension.
    pub expansion: usize,
    /// Target number of active latents per sample.
    pub k_target: usize,
    /// Initial sparsity coefficient (ReLU and JumpReLU only).
    pub lambda: f64,
    pub init_scheme: InitScheme,
    pub freeze_mode: FreezeMode,
    /// Cosine radius of the soft-frozen decoder cap.
    pub tau: f64,
    pub group_fractions: Vec<f64>,
    pub theta_init: f64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            arch: Arch::BatchTopK,
            n: 100,
            expansion: 32,
            k_target: 20,
            lambda: 1e-3,
            init_scheme: InitScheme::Iso,
            freeze_mode: FreezeMode::None,
            tau: 0.8,
            group_fractions: vec![0.5, 0.3, 0.2],
            theta_init: 1e-3,
        }
    }
}

impl SaeConfig {
    pub fn m(&self) -> usize {
        self.n * self.expansion
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("sae.n must be >= 1".into());
        }
        if self.expansion == 0 {
            errs.push("sae.expansion must be >= 1".into());
        }
        if self.k_target == 0 || self.k_target > self.m() {
            errs.push(format!(
                "sae.k_target {} must be in [1, m = {}]",
                self.k_target,
                self.m()
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            errs.push(format!(
                "sae.lambda {} must be finite and >= 0",
                self.lambda
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errs.push(format!("sae.tau {} must be in (0, 1]", self.tau));
        }
        if !(self.theta_init >= 0.0) || !self.theta_init.is_finite() {
            errs.push(format!("sae.theta_init {} must be >= 0", self.theta_init));
        }
        if self.arch == Arch::Matryoshka {
            if let Err(e) = group_boundaries(self.m(), &self.group_fractions) {
                errs.push(e.to_string());
            }
        }
        errs
    }
}

/// Cumulative end index of each Matryoshka group.
///
/// Group `g` gets `floor(fraction_g · m)` latents; the last group absorbs the
/// remainder, so the final boundary is always `m`.
pub fn group_boundaries(m: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() {
        return Err(Error::config("sae.group_fractions must not be empty"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::config(format!(
            "sae.group_fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut bounds = Vec::with_capacity(fractions.len());
    let mut end = 0;
    for (g, f) in fractions.iter().enumerate() {
        let size = if g + 1 == fractions.len() {
            m.saturating_sub(end)
        } else {
            // the epsilon keeps 0.3 * 10 from flooring to 2
            (f * m as f64 + 1e-9).floor() as usize
        };
        if size == 0 {
            return Err(Error::config(format!(
                "matryoshka group {g} is empty for m = {m} and fractions {fractions:?}"
            )));
        }
        end += size;
        bounds.push(end);
    }
    if end != m {
        return Err(Error::config(format!(
            "matryoshka groups cover {end} latents, expected {m}"
        )));
    }
    Ok(bounds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    pub(crate) arch: Arch,
    pub(crate) w_enc: Matrix,
    pub(crate) b_enc: Vec<f64>,
    pub(crate) w_dec: Matrix,
    pub(crate) b_dec: Vec<f64>,
    pub(crate) theta: Option<Vec<f64>>,
    pub(crate) k_target: usize,
    pub(crate) group_fractions: Vec<f64>,
    pub(crate) batch_threshold: Option<f64>,
    pub(crate) version: u64,
}

/// Mutable view of a model's tensors. Taking one invalidates outstanding
/// forward caches.
pub struct ParamsMut<'a> {
    pub w_enc: &'a mut Matrix,
    pub b_enc: &'a mut Vec<f64>,
    pub w_dec: &'a mut Matrix,
    pub b_dec: &'a mut Vec<f64>,
    pub theta: Option<&'a mut Vec<f64>>,
    pub batch_threshold: &'a mut Option<f64>,
}

impl SaeModel {
    /// Assembles a model from explicit tensors, checking every shape
    /// invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        arch: Arch,
        w_enc: Matrix,
        b_enc: Vec<f64>,
        w_dec: Matrix,
        b_dec: Vec<f64>,
        theta: Option<Vec<f64>>,
        k_target: usize,
        group_fractions: Vec<f64>,
        batch_threshold: Option<f64>,
    ) -> Result<Self> {
        let (m, n) = w_enc.shape();
        if w_dec.shape() != (m, n) {
            return Err(Error::shape(format!(
                "decoder {}x{} does not match encoder {m}x{n}",
                w_dec.rows(),
                w_dec.cols()
            )));
        }
        if b_enc.len() != m || b_dec.len() != n {
            return Err(Error::shape("bias length mismatch"));
        }
        match (&theta, arch) {
            (Some(t), Arch::JumpRelu) => {
                if t.len() != m {
                    return Err(Error::shape("theta length mismatch"));
                }
                if t.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::param("theta must be finite and >= 0"));
                }
            }
            (None, Arch::JumpRelu) => return Err(Error::param("jumprelu model needs theta")),
            (Some(_), _) => return Err(Error::param("theta only applies to jumprelu")),
            (None, _) => {}
        }
        if k_target == 0 || k_target > m {
            return Err(Error::config(format!(
                "k_target {k_target} not in [1, {m}]"
            )));
        }
        if arch == Arch::Matryoshka {
            group_boundaries(m, &group_fractions)?;
        }
        if !b_enc.iter().chain(&b_dec).all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite bias".into()));
        }
        Ok(SaeModel {
            arch,
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            theta,
            k_target,
            group_fractions,
            batch_threshold: batch_threshold.filter(|t| t.is_finite()),
            version: 0,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn n(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn m(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn k_target(&self) -> usize {
        self.k_target
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f64] {
        &self.b_enc
    }

    /// `m × n`, one decoder direction per row.
    pub fn w_dec(&self) -> &Matrix {
        &self.w_dec
    }

    pub fn b_dec(&self) -> &[f64] {
        &self.b_dec
    }

    pub fn theta(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    pub fn group_fractions(&self) -> &[f64] {
        &self.group_fractions
    }

    /// Inference threshold of BatchTopK-style models, once calibrated.
    pub fn batch_threshold(&self) -> Option<f64> {
        self.batch_threshold
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        self.version += 1;
        ParamsMut {
            w_enc: &mut self.w_enc,
            b_enc: &mut self.b_enc,
            w_dec: &mut self.w_dec,
            b_dec: &mut self.b_dec,
            theta: self.theta.as_mut(),
            batch_threshold: &mut self.batch_threshold,
        }
    }

    pub(crate) fn touch(&mut self) {
        self.version += 1;
    }

    /// End index of each Matryoshka group; `[m]` for other architectures.
    pub fn boundaries(&self) -> Vec<usize> {
        if self.arch == Arch::Matryoshka {
            group_boundaries(self.m(), &self.group_fractions)
                .expect("fractions validated at construction")
        } else {
            vec![self.m()]
        }
    }
}

/// Builds a freshly initialized model.
///
/// Decoder directions are unit vectors (iso: uniform on the sphere; cov:
/// normalized N(0, Σ) draws). The encoder starts as a copy of the decoder
/// directions, biases at zero and JumpReLU thresholds at `theta_init`.
pub fn init_model(cfg: &SaeConfig, rng: &mut Rng, covariance: Option<&Matrix>) -> Result<SaeModel> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let (m, n) = (cfg.m(), cfg.n);
    let mut w_dec = Matrix::zeros(m, n);
    match cfg.init_scheme {
        InitScheme::Iso => {
            for j in 0..m {
                fill_unit_sphere(w_dec.row_mut(j), rng);
            }
        }
        InitScheme::Cov => {
            let cov = covariance
                .ok_or_else(|| Error::config("cov init scheme requires a covariance matrix"))?;
            if cov.shape() != (n, n) {
                return Err(Error::shape(format!(
                    "covariance is {}x{}, expected {n}x{n}",
                    cov.rows(),
                    cov.cols()
                )));
            }
            let l = psd_cholesky(cov)?;
            if l.as_slice().iter().all(|v| *v == 0.0) {
                return Err(Error::Data("covariance is identically zero".into()));
            }
            let mut g = vec![0.0; n];
            for j in 0..m {
                loop {
                    g.iter_mut().for_each(|v| *v = rng.normal());
                    let row = w_dec.row_mut(j);
                    for (i, out) in row.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (k, gk) in g.iter().enumerate().take(i + 1) {
                            s += l.get(i, k) * gk;
                        }
                        *out = s;
                    }
                    let len = crate::linalg::norm(row);
                    if len > 0.0 {
                        row.iter_mut().for_each(|v| *v /= len);
                        break;
                    }
                }
            }
        }
    }
    let theta = (cfg.arch == Arch::JumpRelu).then(|| vec![cfg.theta_init; m]);
    SaeModel::from_parts(
        cfg.arch,
        w_dec.clone(),
        vec![0.0; m],
        w_dec,
        vec![0.0; n],
        theta,
        cfg.k_target,
        cfg.group_fractions.clone(),
        None,
    )
}

/// Affine pre-activations `X · w_encᵀ + b_enc`, shape `b × m`.
pub fn encode_pre(model: &SaeModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != model.n() {
        return Err(Error::shape(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            model.n()
        )));
    }
    let mut pre = matmul(x, &model.w_enc, false, true)?;
    pre.add_row_broadcast(&model.b_enc)?;
    Ok(pre)
}

/// Sparse latent codes in CSR layout, column indices ascending per row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Codes {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl Codes {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        self.indices[a..b]
            .iter()
            .zip(&self.values[a..b])
            .map(|(&j, &v)| (j as usize, v))
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    /// Fraction of entries that are nonzero.
    pub fn density(&self) -> f64 {
        let cells = self.rows * self.cols;
        if cells == 0 {
            0.0
        } else {
            self.nnz() as f64 / cells as f64
        }
    }

    /// Mean number of nonzero latents per row.
    pub fn mean_l0(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.rows as f64
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut z = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (a, b) = (self.offsets[r], self.offsets[r + 1]);
            let row = z.row_mut(r);
            for t in a..b {
                row[self.indices[t] as usize] = self.values[t];
            }
        }
        z
    }

    pub fn from_dense(z: &Matrix) -> Codes {
        let mut codes = Codes::builder(z.rows(), z.cols());
        for row in z.row_iter() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    codes.push(j, v);
                }
            }
            codes.end_row();
        }
        codes
    }

    /// Counts, per latent, how many rows it is active in.
    pub fn accumulate_firing(&self, counts: &mut [u64]) {
        for &j in &self.indices {
            counts[j as usize] += 1;
        }
    }

    fn builder(rows: usize, cols: usize) -> Codes {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        Codes {
            rows,
            cols,
            offsets,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    #[inline]
    fn push(&mut self, j: usize, v: f64) {
        self.indices.push(j as u32);
        self.values.push(v);
    }

    #[inline]
    fn end_row(&mut self) {
        self.offsets.push(self.values.len());
    }
}

/// Result of the activation step.
#[derive(Clone, Debug)]
pub struct Activation {
    pub codes: Codes,
    /// Smallest value kept by a batch-level selection, if one ran.
    pub min_selected: Option<f64>,
}

// Total order for selection: larger value first, then lower flat index.
#[inline]
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Applies the architecture's nonlinearity to pre-activations `pre` (`b × m`).
pub fn activate_sparse(model: &SaeModel, pre: &Matrix, mode: Mode) -> Result<Activation> {
    let (rows, m) = pre.shape();
    if m != model.m() {
        return Err(Error::shape(format!(
            "pre-activations have {m} columns, model has {} latents",
            model.m()
        )));
    }
    let k = model.k_target;
    if k > m {
        return Err(Error::config(format!("k_target {k} exceeds m = {m}")));
    }
    let mut codes = Codes::builder(rows, m);
    let mut min_selected = None;
    match model.arch {
        Arch::Relu => threshold_rows(pre, &mut codes, |_| 0.0),
        Arch::JumpRelu => {
            let theta = model.theta.as_ref().expect("jumprelu has theta");
            threshold_rows(pre, &mut codes, |j| theta[j]);
        }
        Arch::TopK => {
            // best k so far, kept in rank order
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            let mut keep: Vec<usize> = Vec::with_capacity(k);
            for row in pre.row_iter() {
                best.clear();
                // Entries not above `floor` cannot enter: it is 0 until k are
                // held, then the k-th value (an equal value loses on index).
                let mut floor = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    if !(v > floor) {
                        continue;
                    }
                    let c = (v, j);
                    let pos = best.partition_point(|e| rank_order(e, &c).is_lt());
                    best.insert(pos, c);
                    best.truncate(k);
                    if best.len() == k {
                        floor = best[k - 1].0;
                    }
                }
                keep.clear();
                keep.extend(best.iter().map(|c| c.1));
                keep.sort_unstable();
                for &j in &keep {
                    codes.push(j, row[j]);
                }
                codes.end_row();
            }
        }
        Arch::BatchTopK | Arch::Matryoshka => match (mode, model.batch_threshold) {
            (Mode::Infer, Some(t)) => threshold_rows(pre, &mut codes, |_| t.max(0.0)),
            _ => {
                min_selected = batch_topk(pre, rows * k, &mut codes);
            }
        },
    }
    Ok(Activation {
        codes,
        min_selected,
    })
}

/// Keeps `pre[i, j] > floor(j)`; a zero floor is plain ReLU.
fn threshold_rows(pre: &Matrix, codes: &mut Codes, floor: impl Fn(usize) -> f64) {
    for row in pre.row_iter() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0.0 && v > floor(j) {
                codes.push(j, v);
            }
        }
        codes.end_row();
    }
}

/// Keeps the `budget` largest positive entries of the whole batch.
fn batch_topk(pre: &Matrix, budget: usize, codes: &mut Codes) -> Option<f64> {
    let m = pre.cols();
    let data = pre.as_slice();
    let collect = |floor: f64| -> Vec<(f64, usize)> {
        data.iter()
            .enumerate()
            .filter(|(_, v)| **v > floor)
            .map(|(i, &v)| (v, i))
            .collect()
    };
    // A floor with at least `budget` entries above it keeps every entry the
    // full selection would, so the result is the same as scanning all.
    let mut cand = match candidate_floor(data, budget) {
        Some(floor) => {
            let c = collect(floor);
            if c.len() >= budget {
                c
            } else {
                collect(0.0)
            }
        }
        None => collect(0.0),
    };
    if budget == 0 {
        cand.clear();
    } else if cand.len() > budget {
        cand.select_nth_unstable_by(budget - 1, rank_order);
        cand.truncate(budget);
    }
    let min_selected = cand.iter().map(|c| c.0).reduce(f64::min);
    let mut flat: Vec<usize> = cand.into_iter().map(|c| c.1).collect();
    flat.sort_unstable();
    let mut it = flat.into_iter().peekable();
    for r in 0..pre.rows() {
        let end = (r + 1) * m;
        while let Some(&i) = it.peek() {
            if i >= end {
                break;
            }
            codes.push(i - r * m, data[i]);
            it.next();
        }
        codes.end_row();
    }
    min_selected
}

/// Guess at a value with roughly twice `budget` entries above it, from a
/// strided subsample. `None` when the batch is too small to bother.
fn candidate_floor(data: &[f64], budget: usize) -> Option<f64> {
    const SAMPLE: usize = 1 << 15;
    if budget == 0 || data.len() < 16 * SAMPLE.min(64 * budget) {
        return None;
    }
    let stride = data.len() / SAMPLE;
    let mut sample: Vec<f64> = data.iter().step_by(stride.max(1)).copied().collect();
    let rank = (2 * budget * sample.len()).div_ceil(data.len());
    if rank >= sample.len() {
        return None;
    }
    sample.select_nth_unstable_by(rank, |a, b| b.total_cmp(a));
    let floor = sample[rank];
    (floor > 0.0).then_some(floor)
}

/// Dense activation output, `b × m`.
pub fn activate(model: &SaeModel, pre: &Matrix, mode: Mode) -> Result<Matrix> {
    Ok(activate_sparse(model, pre, mode)?.codes.to_dense())
}

/// `x̂ = b_dec + Σ_j z_j · d_j`, summed in increasing latent index.
pub fn decode_codes(model: &SaeModel, codes: &Codes) -> Result<Matrix> {
    if codes.cols() != model.m() {
        return Err(Error::shape(format!(
            "codes have {} latents, model has {}",
            codes.cols(),
            model.m()
        )));
    }
    let n = model.n();
    let mut out = Matrix::zeros(codes.rows(), n);
    for r in 0..codes.rows() {
        let row = out.row_mut(r);
        row.copy_from_slice(&model.b_dec);
        for (j, v) in codes.row(r) {
            axpy(v, model.w_dec.row(j), row);
        }
    }
    Ok(out)
}

pub fn decode(model: &SaeModel, z: &Matrix) -> Result<Matrix> {
    if z.cols() != model.m() {
        return Err(Error::shape(format!(
            "codes have {} latents, model has {}",
            z.cols(),
            model.m()
        )));
    }
    decode_codes(model, &Codes::from_dense(z))
}

/// Reconstructions from each cumulative latent prefix `[0, g)` for the
/// group boundaries `g`. The last entry equals [`decode_codes`].
/// Above this fraction of nonzero codes, decoding uses a dense product.
const DENSE_DECODE: f64 = 0.1;

pub fn decode_prefixes_codes(
    model: &SaeModel,
    codes: &Codes,
    bounds: &[usize],
) -> Result<Vec<Matrix>> {
    if codes.cols() != model.m() {
        return Err(Error::shape("codes do not match model"));
    }
    let n = model.n();
    if bounds.len() == 1 && codes.density() > DENSE_DECODE {
        let mut out = matmul(&codes.to_dense(), &model.w_dec, false, false)?;
        out.add_row_broadcast(&model.b_dec)?;
        return Ok(vec![out]);
    }
    let mut outs: Vec<Matrix> = Vec::with_capacity(bounds.len());
    let mut acc = Matrix::zeros(codes.rows(), n);
    for r in 0..codes.rows() {
        acc.row_mut(r).copy_from_slice(&model.b_dec);
    }
    let mut cursor: Vec<usize> = vec![0; codes.rows()];
    for &end in bounds {
        for (r, cur) in cursor.iter_mut().enumerate() {
            let row_codes: Vec<(usize, f64)> = codes
                .row(r)
                .skip(*cur)
                .take_while(|(j, _)| *j < end)
                .collect();
            *cur += row_codes.len();
            let row = acc.row_mut(r);
            for (j, v) in row_codes {
                axpy(v, model.w_dec.row(j), row);
            }
        }
        outs.push(acc.clone());
    }
    Ok(outs)
}

pub fn decode_prefixes(model: &SaeModel, z: &Matrix) -> Result<Vec<Matrix>> {
    if model.arch != Arch::Matryoshka {
        return Err(Error::Mode(format!(
            "prefix decoding needs a matryoshka model, got {}",
            model.arch
        )));
    }
    if z.cols() != model.m() {
        return Err(Error::shape("codes do not match model"));
    }
    decode_prefixes_codes(model, &Codes::from_dense(z), &model.boundaries())
}

/// Forward pass `encode → activate → decode` in inference mode.
pub fn reconstruct(model: &SaeModel, x: &Matrix) -> Result<(Matrix, Codes)> {
    let pre = encode_pre(model, x)?;
    let codes = activate_sparse(model, &pre, Mode::Infer)?.codes;
    Ok((decode_codes(model, &codes)?, codes))
}
