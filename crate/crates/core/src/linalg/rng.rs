// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded randomness and the samplers the synthetic generator and
//! initializers draw from.
//!
//! [`Rng`] wraps a ChaCha8 stream. Child streams come from [`Rng::fork`],
//! which derives the child seed from the parent *seed* and a stream id only,
//! so sub-streams do not depend on how much the parent has been consumed.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use super::matrix::{norm, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `stream` of this generator's seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(derive_seed(self.seed, stream))
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `(0, 1]`; safe to take the log of.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

/// Seed of sub-stream `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Fills `out` with a direction drawn uniformly from the unit sphere.
pub fn fill_unit_sphere(out: &mut [f64], rng: &mut Rng) {
    loop {
        for v in out.iter_mut() {
            *v = rng.normal();
        }
        let len = norm(out);
        // an all-zero Gaussian draw has probability zero but cannot be normalized
        if len > 0.0 {
            out.iter_mut().for_each(|v| *v /= len);
            return;
        }
    }
}

/// A 1×n row drawn uniformly from the unit sphere S^{n−1}.
pub fn sample_unit_sphere(n: usize, rng: &mut Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::shape("unit sphere needs dimension >= 1"));
    }
    let mut v = vec![0.0; n];
    fill_unit_sphere(&mut v, rng);
    Matrix::from_vec(1, n, v)
}

/// Log-normal sampler, `exp(N(mu, sigma²))`.
#[derive(Clone, Copy, Debug)]
pub struct LogNormalSampler(LogNormal<f64>);

impl LogNormalSampler {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::param(format!(
                "log-normal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        LogNormal::new(mu, sigma)
            .map(LogNormalSampler)
            .map_err(|e| Error::param(e.to_string()))
    }

    #[inline]
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.0.sample(rng)
    }
}

pub fn sample_lognormal(mu: f64, sigma: f64, rng: &mut Rng) -> Result<f64> {
    Ok(LogNormalSampler::new(mu, sigma)?.sample(rng))
}

/// `exp(U(ln lo, ln hi))`, clamped into `[lo, hi]` against rounding in `exp`.
pub fn sample_loguniform(lo: f64, hi: f64, rng: &mut Rng) -> Result<f64> {
    if !(lo > 0.0) || !(lo < hi) || !hi.is_finite() {
        return Err(Error::param(format!(
            "log-uniform needs 0 < lo < hi, got lo={lo}, hi={hi}"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((a + (b - a) * rng.uniform()).exp().clamp(lo, hi))
}
