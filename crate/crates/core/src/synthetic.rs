// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic superposition data with a known ground-truth dictionary.
//!
//! Each sample is `x = Σ_i b_i · c_i · f_i` with `b_i ~ Bernoulli(p_i)`,
//! `c_i ~ LogNormal(μ, σ²)` drawn fresh per (sample, active feature), and
//! unit-norm features `f_i` drawn uniformly from the sphere. Sample `s` of a
//! stream always uses sub-stream `s` of the stream's generator, so rows are
//! reproducible individually and independent of batch boundaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::explained_variance;
use crate::linalg::{axpy, fill_unit_sphere, sample_loguniform, LogNormalSampler, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every feature fires with the same probability.
    Constant,
    /// Per-feature probabilities drawn log-uniformly.
    Variable,
}

/// How the second log-normal parameter is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadParam {
    Variance,
    StdDev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub m_true: usize,
    pub regime: Regime,
    pub p_const: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub coef_mu: f64,
    /// Second parameter of the coefficient law; see `coef_spread_kind`.
    pub coef_spread: f64,
    pub coef_spread_kind: SpreadParam,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 100,
            m_true: 3200,
            regime: Regime::Constant,
            p_const: 0.00625,
            p_lo: 10f64.powf(-5.5),
            p_hi: 10f64.powf(-1.2),
            coef_mu: 0.0,
            coef_spread: 0.25,
            coef_spread_kind: SpreadParam::Variance,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Standard deviation of the log-coefficient.
    pub fn coef_sigma(&self) -> f64 {
        match self.coef_spread_kind {
            SpreadParam::Variance => self.coef_spread.sqrt(),
            SpreadParam::StdDev => self.coef_spread,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("synthetic.n must be >= 1".into());
        }
        if self.m_true == 0 {
            errs.push("synthetic.m_true must be >= 1".into());
        }
        match self.regime {
            Regime::Constant => {
                if !(0.0..=1.0).contains(&self.p_const) {
                    errs.push(format!("synthetic.p_const {} not in [0, 1]", self.p_const));
                }
            }
            Regime::Variable => {
                if !(self.p_lo > 0.0 && self.p_lo < self.p_hi && self.p_hi <= 1.0) {
                    errs.push(format!(
                        "synthetic.p_lo/p_hi must satisfy 0 < lo < hi <= 1, got {} / {}",
                        self.p_lo, self.p_hi
                    ));
                }
            }
        }
        if !(self.coef_spread > 0.0) || !self.coef_spread.is_finite() {
            errs.push(format!(
                "synthetic.coef_spread {} must be > 0",
                self.coef_spread
            ));
        }
        if !self.coef_mu.is_finite() {
            errs.push("synthetic.coef_mu must be finite".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `m_true × n`, one unit-norm feature per row.
    pub features: Matrix,
    pub probs: Vec<f64>,
    pub coef_mu: f64,
    pub coef_sigma: f64,
    pub regime: Regime,
}

impl GroundTruth {
    pub fn n(&self) -> usize {
        self.features.cols()
    }

    pub fn m_true(&self) -> usize {
        self.features.rows()
    }

    /// Expected number of active features per sample.
    pub fn expected_l0(&self) -> f64 {
        // compensated sum, so 3200 × 0.00625 comes out as exactly 20
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &p in &self.probs {
            let t = sum + p;
            comp += if sum.abs() >= p.abs() {
                (sum - t) + p
            } else {
                (p - t) + sum
            };
            sum = t;
        }
        sum + comp
    }
}

// Sub-streams of the config seed.
const FEATURE_STREAM: u64 = 0;
const PROB_STREAM: u64 = 1;

pub fn generate_ground_truth(cfg: &SyntheticConfig) -> Result<GroundTruth> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    // validates the coefficient law up front
    LogNormalSampler::new(cfg.coef_mu, cfg.coef_sigma())?;

    let root = Rng::new(cfg.seed);
    let mut frng = root.fork(FEATURE_STREAM);
    let mut features = Matrix::zeros(cfg.m_true, cfg.n);
    for i in 0..cfg.m_true {
        fill_unit_sphere(features.row_mut(i), &mut frng);
    }

    let probs = match cfg.regime {
        Regime::Constant => vec![cfg.p_const; cfg.m_true],
        Regime::Variable => {
            let mut prng = root.fork(PROB_STREAM);
            (0..cfg.m_true)
                .map(|_| sample_loguniform(cfg.p_lo, cfg.p_hi, &mut prng))
                .collect::<Result<Vec<_>>>()?
        }
    };

    Ok(GroundTruth {
        features,
        probs,
        coef_mu: cfg.coef_mu,
        coef_sigma: cfg.coef_sigma(),
        regime: cfg.regime,
    })
}

/// Which (feature, coefficient) pairs fired in each sample, in CSR layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationRecord {
    offsets: Vec<usize>,
    features: Vec<u32>,
    coefs: Vec<f64>,
}

impl ActivationRecord {
    fn new() -> Self {
        ActivationRecord {
            offsets: vec![0],
            ..Default::default()
        }
    }

    pub fn samples(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_active(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// `(feature, coefficient)` pairs of sample `s`, by ascending feature.
    pub fn sample(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[s], self.offsets[s + 1]);
        self.features[a..b]
            .iter()
            .zip(&self.coefs[a..b])
            .map(|(&f, &c)| (f as usize, c))
    }

    pub fn active_count(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }
}

/// Draws samples for the ground truth from sub-streams of `rng`.
pub struct SampleStream<'a> {
    gt: &'a GroundTruth,
    base: Rng,
    coef: LogNormalSampler,
    p_max: f64,
    log_miss: f64,
}

impl<'a> SampleStream<'a> {
    pub fn new(gt: &'a GroundTruth, rng: &Rng) -> Result<Self> {
        let p_max = gt.probs.iter().copied().fold(0.0, f64::max);
        if gt.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("activation probabilities must lie in [0, 1]"));
        }
        Ok(SampleStream {
            gt,
            base: rng.clone(),
            coef: LogNormalSampler::new(gt.coef_mu, gt.coef_sigma)?,
            p_max,
            log_miss: (-p_max).ln_1p(),
        })
    }

    /// Fills `out` with sample number `index`, reporting every firing feature
    /// through `fired(feature, coef)` in ascending feature order.
    ///
    /// Bernoulli draws use thinning: candidates arrive as a Bernoulli(p_max)
    /// process via geometric gaps and are kept with probability p_i / p_max,
    /// which leaves every feature independently active with probability p_i.
    pub fn sample_into(&self, index: u64, out: &mut [f64], mut fired: impl FnMut(usize, f64)) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.p_max <= 0.0 {
            return;
        }
        let mut rng = self.base.fork(index);
        let m = self.gt.m_true();
        let mut i: usize = 0;
        let mut first = true;
        loop {
            if self.p_max < 1.0 {
                let gap = (rng.uniform_open0().ln() / self.log_miss).floor();
                if !gap.is_finite() || gap >= m as f64 {
                    break;
                }
                i = if first {
                    gap as usize
                } else {
                    i + 1 + gap as usize
                };
            } else if !first {
                i += 1;
            }
            first = false;
            if i >= m {
                break;
            }
            let p = self.gt.probs[i];
            let keep = p == self.p_max || rng.uniform() * self.p_max < p;
            if keep {
                let c = self.coef.sample(&mut rng);
                axpy(c, self.gt.features.row(i), out);
                fired(i, c);
            }
        }
    }

    /// Samples `first..first + count` as a matrix, plus their record.
    pub fn batch(&self, first: u64, count: usize) -> (Matrix, ActivationRecord) {
        let n = self.gt.n();
        let mut x = Matrix::zeros(count, n);
        let mut rec = ActivationRecord::new();
        for r in 0..count {
            self.sample_into(first + r as u64, x.row_mut(r), |f, c| {
                rec.features.push(f as u32);
                rec.coefs.push(c);
            });
            rec.offsets.push(rec.features.len());
        }
        (x, rec)
    }

    /// Samples `first..first + count` without keeping a record.
    pub fn batch_matrix(&self, first: u64, count: usize) -> Matrix {
        let n = self.gt.n();
        let mut x = Matrix::zeros(count, n);
        if n == 0 {
            return x;
        }
        // rows come from independent sub-streams, so any split is deterministic
        x.as_mut_slice()
            .par_chunks_mut(n)
            .with_min_len(64)
            .enumerate()
            .for_each(|(r, row)| self.sample_into(first + r as u64, row, |_, _| {}));
        x
    }
}

/// `batch` fresh samples: sample `r` comes from sub-stream `r` of `rng`.
pub fn sample_batch(
    gt: &GroundTruth,
    batch: usize,
    rng: &Rng,
) -> Result<(Matrix, ActivationRecord)> {
    if batch == 0 {
        return Err(Error::param("batch must be >= 1"));
    }
    Ok(SampleStream::new(gt, rng)?.batch(0, batch))
}

/// Rebuilds each sample from its `k` largest-coefficient true terms.
///
/// Terms are summed largest first (ties to the lower feature index); no
/// offset is added, so `k = 0` predicts the zero vector.
pub fn partial_reconstruction(gt: &GroundTruth, record: &ActivationRecord, k: usize) -> Matrix {
    let mut out = Matrix::zeros(record.samples(), gt.n());
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for s in 0..record.samples() {
        terms.clear();
        terms.extend(record.sample(s));
        terms.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let row = out.row_mut(s);
        for &(f, c) in terms.iter().take(k) {
            axpy(c, gt.features.row(f), row);
        }
    }
    out
}

/// Explained variance reached by keeping each sample's `k` largest true terms.
pub fn optimal_ev_oracle(
    gt: &GroundTruth,
    x: &Matrix,
    record: &ActivationRecord,
    k: usize,
) -> Result<f64> {
    if record.samples() != x.rows() {
        return Err(Error::shape(format!(
            "record covers {} samples, X has {} rows",
            record.samples(),
            x.rows()
        )));
    }
    explained_variance(x, &partial_reconstruction(gt, record, k))
}
