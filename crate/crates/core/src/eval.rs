// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation metrics that need no external model: reconstruction fidelity,
//! ground-truth recovery, sparsity, drift from initialization and the
//! spherical-cap alignment bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, row_cosine_matrix, Matrix};
use crate::sae::Codes;

/// Cosine at or above which a ground-truth feature counts as recovered.
pub const RECOVERY_THRESHOLD: f64 = 0.8;

/// Latents firing on a smaller fraction of samples than this are dead.
pub const DEAD_FREQUENCY: f64 = 1e-6;

/// `1 − E‖x − x̂‖² / E‖x − E[x]‖²`, with `E[x]` the per-dimension mean of `x`.
pub fn explained_variance(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    x.check_same_shape(x_hat)?;
    if x.rows() < 2 {
        return Err(Error::Data(format!(
            "explained variance needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    let mean = x.column_means();
    let mut resid = 0.0;
    let mut total = 0.0;
    for (row, row_hat) in x.row_iter().zip(x_hat.row_iter()) {
        for ((v, h), mu) in row.iter().zip(row_hat).zip(&mean) {
            resid += (v - h) * (v - h);
            total += (v - mu) * (v - mu);
        }
    }
    if total == 0.0 {
        return Err(Error::Data(
            "explained variance undefined: input has zero variance".into(),
        ));
    }
    Ok(1.0 - resid / total)
}

/// Mean count of nonzero entries per row.
pub fn measured_l0(z: &Matrix) -> f64 {
    if z.rows() == 0 {
        return 0.0;
    }
    let nnz = z.as_slice().iter().filter(|v| v.abs() > 0.0).count();
    nnz as f64 / z.rows() as f64
}

/// Best match of one ground-truth feature among the decoder directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub cosine: f64,
    pub latent: usize,
}

// Ground-truth rows scored per block, bounding the cosine buffer.
const RECOVERY_BLOCK: usize = 256;

/// For each ground-truth feature (row of `gt_features`), the maximum cosine
/// over decoder directions (rows of `decoder`) and where it was attained.
/// Ties keep the lowest latent index.
pub fn feature_matches(gt_features: &Matrix, decoder: &Matrix) -> Result<Vec<Match>> {
    if gt_features.cols() != decoder.cols() {
        return Err(Error::shape(format!(
            "features have dimension {}, decoder directions {}",
            gt_features.cols(),
            decoder.cols()
        )));
    }
    if decoder.rows() == 0 {
        return Err(Error::shape("decoder has no directions"));
    }
    if let Some(i) = gt_features.row_norms().iter().position(|v| *v == 0.0) {
        return Err(Error::Data(format!("ground-truth feature {i} is zero")));
    }
    let mut out = Vec::with_capacity(gt_features.rows());
    let mut start = 0;
    while start < gt_features.rows() {
        let end = (start + RECOVERY_BLOCK).min(gt_features.rows());
        let cos = row_cosine_matrix(&gt_features.row_range(start, end), decoder)?;
        for row in cos.row_iter() {
            let mut best = Match {
                cosine: row[0],
                latent: 0,
            };
            for (j, &c) in row.iter().enumerate().skip(1) {
                if c > best.cosine {
                    best = Match {
                        cosine: c,
                        latent: j,
                    };
                }
            }
            out.push(best);
        }
        start = end;
    }
    Ok(out)
}

/// Max cosine of each ground-truth feature against the decoder directions.
pub fn feature_recovery(gt_features: &Matrix, decoder: &Matrix) -> Result<Vec<f64>> {
    Ok(feature_matches(gt_features, decoder)?
        .into_iter()
        .map(|m| m.cosine)
        .collect())
}

pub fn recovered_count(recovery: &[f64], threshold: f64) -> usize {
    recovery.iter().filter(|r| **r >= threshold).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub p_lo: f64,
    pub p_hi: f64,
    pub features: usize,
    pub recovered: usize,
    /// `None` for an empty bin.
    pub fraction: Option<f64>,
}

/// Fraction of features recovered within log-spaced activation-probability
/// bins over `[lo, hi]`. Probabilities outside the range land in the end
/// bins. When every probability is equal there is a single bin.
pub fn frequency_binned_recovery(
    recovery: &[f64],
    probs: &[f64],
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<FrequencyBin>> {
    if recovery.len() != probs.len() {
        return Err(Error::shape(format!(
            "{} recoveries for {} probabilities",
            recovery.len(),
            probs.len()
        )));
    }
    if bins == 0 {
        return Err(Error::param("need at least one bin"));
    }
    let constant = probs.windows(2).all(|w| w[0] == w[1]);
    if constant || probs.is_empty() {
        let p = probs.first().copied().unwrap_or(0.0);
        let rec = recovered_count(recovery, RECOVERY_THRESHOLD);
        return Ok(vec![FrequencyBin {
            p_lo: p,
            p_hi: p,
            features: probs.len(),
            recovered: rec,
            fraction: (!probs.is_empty()).then(|| rec as f64 / probs.len() as f64),
        }]);
    }
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::param(format!(
            "bin range needs 0 < lo < hi, got {lo}, {hi}"
        )));
    }
    let (llo, lhi) = (lo.log10(), hi.log10());
    let width = (lhi - llo) / bins as f64;
    let mut counts = vec![(0usize, 0usize); bins];
    for (r, p) in recovery.iter().zip(probs) {
        let pos = if *p > 0.0 {
            (p.log10() - llo) / width
        } else {
            0.0
        };
        let b = (pos.floor().max(0.0) as usize).min(bins - 1);
        counts[b].0 += 1;
        if *r >= RECOVERY_THRESHOLD {
            counts[b].1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, (total, rec))| FrequencyBin {
            p_lo: 10f64.powf(llo + width * b as f64),
            p_hi: 10f64.powf(llo + width * (b + 1) as f64),
            features: total,
            recovered: rec,
            fraction: (total > 0).then(|| rec as f64 / total as f64),
        })
        .collect())
}

/// Base-10 logs of the spherical-cap alignment bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapBound {
    /// `log10 exp(−nτ²/2)`: a random direction lands within cosine τ of one
    /// fixed unit vector.
    pub log10_single: f64,
    /// Union bound over `m` caps.
    pub log10_union: f64,
}

pub fn cap_bound(n: usize, tau: f64, m: usize) -> Result<CapBound> {
    if n == 0 || m == 0 {
        return Err(Error::param("cap bound needs n >= 1 and m >= 1"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::param(format!(
            "cap bound needs tau in (0, 1], got {tau}"
        )));
    }
    let log10_single = -(n as f64) * tau * tau / (2.0 * std::f64::consts::LN_10);
    Ok(CapBound {
        log10_single,
        log10_union: log10_single + (m as f64).log10(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins `[e_k, e_{k+1})`, the last closed on the right. Values outside
    /// the edges are clamped into the end bins.
    pub fn from_values(values: &[f64], edges: &[f64]) -> Result<Histogram> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param(
                "histogram edges must be increasing, at least two",
            ));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &v in values {
            // first edge strictly greater than v, minus one
            let b = edges.partition_point(|e| *e <= v);
            counts[b.saturating_sub(1).min(bins - 1)] += 1;
        }
        Ok(Histogram {
            edges: edges.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `bins` equal-width edges spanning `[-1, 1]`.
pub fn cosine_edges(bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|b| -1.0 + 2.0 * b as f64 / bins as f64)
        .collect()
}

/// Cosine between each decoder direction and its initial value.
pub fn cosine_to_init(w_dec: &Matrix, w_dec_init: &Matrix) -> Result<Vec<f64>> {
    w_dec.check_same_shape(w_dec_init)?;
    Ok(w_dec
        .row_iter()
        .zip(w_dec_init.row_iter())
        .map(|(d, d0)| cosine(d, d0))
        .collect())
}

pub fn cosine_to_init_histogram(
    w_dec: &Matrix,
    w_dec_init: &Matrix,
    edges: &[f64],
) -> Result<Histogram> {
    Histogram::from_values(&cosine_to_init(w_dec, w_dec_init)?, edges)
}

/// Full evaluation record of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub explained_variance: f64,
    pub measured_l0: f64,
    pub dead_fraction: f64,
    /// Per ground-truth feature max cosine; empty without ground truth.
    pub recovery: Vec<f64>,
    pub recovery_threshold: f64,
    pub recovered_count: usize,
    pub recovered_fraction: f64,
    pub frequency_bins: Vec<FrequencyBin>,
    /// Mean activation probability over recovered features.
    pub mean_prob_recovered: Option<f64>,
    pub mean_prob_all: Option<f64>,
    pub cap_bound_log10_single: f64,
    pub cap_bound_log10_union: f64,
    pub cosine_to_init: Option<Histogram>,
}

/// Per-latent firing counts to dead fraction.
pub fn dead_fraction(firing: &[u64], samples: usize) -> f64 {
    if firing.is_empty() || samples == 0 {
        return 0.0;
    }
    let dead = firing
        .iter()
        .filter(|c| (**c as f64 / samples as f64) < DEAD_FREQUENCY)
        .count();
    dead as f64 / firing.len() as f64
}

/// Mean L0 of sparse codes.
pub fn codes_l0(codes: &Codes) -> f64 {
    codes.mean_l0()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(r).unwrap()
    }

    #[test]
    fn ev_trivial_cases() {
        let x = rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 0.5]]);
        assert_eq!(explained_variance(&x, &x).unwrap(), 1.0);
        let mean = x.column_means();
        let m = rows(&[mean.clone(), mean.clone(), mean]);
        assert!(explained_variance(&x, &m).unwrap().abs() < 1e-15);
        let x = rows(&[vec![0.0], vec![2.0]]);
        let h = rows(&[vec![0.0], vec![1.0]]);
        assert_eq!(explained_variance(&x, &h).unwrap(), 0.5);
    }

    #[test]
    fn ev_errors() {
        let x = rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(explained_variance(&x, &x), Err(Error::Data(_))));
        let one = rows(&[vec![1.0]]);
        assert!(explained_variance(&one, &one).is_err());
        assert!(explained_variance(&x, &one).is_err());
    }

    #[test]
    fn recovery_identity_and_orthogonal() {
        let f = rows(&[vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0]]);
        for r in feature_recovery(&f, &f).unwrap() {
            assert!((r - 1.0).abs() < 1e-12);
        }
        let e1 = rows(&[vec![1.0, 0.0, 0.0]]);
        let dec = rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(feature_recovery(&e1, &dec).unwrap(), vec![0.0]);
        assert!(feature_recovery(&e1, &rows(&[vec![1.0, 0.0]])).is_err());
    }

    #[test]
    fn zero_decoder_direction_scores_zero() {
        let e1 = rows(&[vec![1.0, 0.0]]);
        let dec = rows(&[vec![0.0, 0.0], vec![-1.0, 0.0]]);
        let m = feature_matches(&e1, &dec).unwrap();
        assert_eq!(m[0].cosine, 0.0);
        assert_eq!(m[0].latent, 0);
    }

    #[test]
    fn binned_trivial() {
        let probs: Vec<f64> = (0..40).map(|i| 10f64.powf(-5.0 + i as f64 * 0.1)).collect();
        let ones = vec![1.0; 40];
        let zeros = vec![0.0; 40];
        for b in frequency_binned_recovery(&ones, &probs, 8, 1e-5, 1e-1).unwrap() {
            assert_eq!(b.fraction, Some(1.0));
        }
        for b in frequency_binned_recovery(&zeros, &probs, 8, 1e-5, 1e-1).unwrap() {
            assert_eq!(b.fraction, Some(0.0));
        }
    }

    #[test]
    fn binned_top_decile_fixture() {
        // 10 features per bin, evenly log-spaced; top decile recovered
        let bins = 10;
        let (lo, hi) = (1e-5f64, 1e-1f64);
        let step = (hi.log10() - lo.log10()) / 100.0;
        let probs: Vec<f64> = (0..100)
            .map(|i| 10f64.powf(lo.log10() + step * (i as f64 + 0.5)))
            .collect();
        let rec: Vec<f64> = (0..100).map(|i| if i >= 90 { 0.95 } else { 0.1 }).collect();
        let out = frequency_binned_recovery(&rec, &probs, bins, lo, hi).unwrap();
        assert_eq!(out.len(), bins);
        for (b, bin) in out.iter().enumerate() {
            assert_eq!(bin.features, 10);
            let want = if b == bins - 1 { 1.0 } else { 0.0 };
            assert_eq!(bin.fraction, Some(want));
        }
    }

    #[test]
    fn binned_constant_is_single_bin() {
        let out = frequency_binned_recovery(&[0.9, 0.1], &[0.1, 0.1], 20, 1e-5, 1e-1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].fraction, Some(0.5));
    }

    #[test]
    fn cap_bound_values() {
        let b = cap_bound(2304, 0.8, 73728).unwrap();
        assert!((b.log10_single + 320.20).abs() < 0.01, "{}", b.log10_single);
        assert!((b.log10_union + 315.33).abs() < 0.01, "{}", b.log10_union);
        let b = cap_bound(2, 1.0, 1).unwrap();
        assert!((b.log10_single + 1.0 / std::f64::consts::LN_10).abs() < 1e-15);
        assert_eq!(b.log10_union, b.log10_single);
        assert!(cap_bound(10, 0.0, 5).is_err());
        assert!(cap_bound(10, -0.5, 5).is_err());
        assert!(cap_bound(0, 0.5, 5).is_err());
    }

    #[test]
    fn histogram_extremes() {
        let w = rows(&[vec![1.0, 0.0], vec![0.3, 0.4]]);
        let edges = cosine_edges(20);
        let h = cosine_to_init_histogram(&w, &w, &edges).unwrap();
        assert_eq!(h.counts[19], 2);
        assert_eq!(h.total(), 2);
        let mut neg = w.clone();
        neg.scale(-1.0);
        let h = cosine_to_init_histogram(&neg, &w, &edges).unwrap();
        assert_eq!(h.counts[0], 2);
    }

    #[test]
    fn l0_counts() {
        assert_eq!(measured_l0(&Matrix::zeros(3, 4)), 0.0);
        assert_eq!(measured_l0(&Matrix::identity(4)), 1.0);
    }
}
