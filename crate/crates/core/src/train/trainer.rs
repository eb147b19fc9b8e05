// SPDX-License-Identifier: MIT OR Apache-2.0

//! The training loop and its telemetry.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::control::LambdaController;
use super::freeze::{normalize_rows, FreezeSpec};
use super::grad::{backward, cache_loss, forward_train, Penalty};
use super::optim::{adamw_step, AdamWConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::eval::{cosine_edges, cosine_to_init, explained_variance, Histogram, DEAD_FREQUENCY};
use crate::linalg::{Matrix, Rng};
use crate::sae::{Arch, FreezeMode, SaeModel};
use crate::synthetic::{GroundTruth, SampleStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    pub controller: LambdaController,
    pub ste_bandwidth: f64,
    pub threshold_decay: f64,
    /// Steps between interval records.
    pub log_interval: u64,
    /// Fraction of the run between cosine-to-init snapshots.
    pub snapshot_fraction: f64,
    pub histogram_bins: usize,
    /// Rows of the fixed held-out batch used for interval metrics.
    pub holdout: usize,
    /// Samples drawn to estimate the covariance for `cov` initialization.
    pub covariance_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch: 1024,
            optimizer: AdamWConfig::default(),
            controller: LambdaController::default(),
            ste_bandwidth: 1e-3,
            threshold_decay: 0.999,
            log_interval: 500,
            snapshot_fraction: 0.05,
            histogram_bins: 20,
            holdout: 4096,
            covariance_samples: 16_384,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.steps == 0 {
            errs.push("train.steps must be >= 1".into());
        }
        if self.batch == 0 {
            errs.push("train.batch must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            errs.push(format!("train.optimizer.lr {} must be > 0", o.lr));
        }
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("train.optimizer.{name} {b} must be in [0, 1)"));
            }
        }
        if !(o.eps > 0.0) {
            errs.push("train.optimizer.eps must be > 0".into());
        }
        if !(o.weight_decay >= 0.0) {
            errs.push("train.optimizer.weight_decay must be >= 0".into());
        }
        let c = &self.controller;
        if !(c.gain >= 0.0) || !(c.min > 0.0 && c.min <= c.max) {
            errs.push("train.controller needs gain >= 0 and 0 < min <= max".into());
        }
        if !(self.ste_bandwidth > 0.0) {
            errs.push("train.ste_bandwidth must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.threshold_decay) {
            errs.push("train.threshold_decay must be in [0, 1)".into());
        }
        if self.log_interval == 0 {
            errs.push("train.log_interval must be >= 1".into());
        }
        if !(self.snapshot_fraction > 0.0 && self.snapshot_fraction <= 1.0) {
            errs.push("train.snapshot_fraction must be in (0, 1]".into());
        }
        if self.histogram_bins == 0 {
            errs.push("train.histogram_bins must be >= 1".into());
        }
        if self.holdout < 2 {
            errs.push("train.holdout must be >= 2".into());
        }
        if self.covariance_samples < 2 {
            errs.push("train.covariance_samples must be >= 2".into());
        }
        errs
    }

    /// Steps after which a cosine-to-init snapshot is taken, starting at 0.
    pub fn snapshot_steps(&self) -> Vec<u64> {
        let count = (1.0 / self.snapshot_fraction).round().max(1.0) as u64;
        let mut out: Vec<u64> = (0..=count)
            .map(|s| ((s as f64 / count as f64) * self.steps as f64).round() as u64)
            .collect();
        out.dedup();
        out
    }
}

/// Supplier of training rows. Batch `index` must always yield the same rows.
pub trait DataSource: Send + Sync {
    fn dim(&self) -> usize;
    fn batch(&mut self, index: u64, size: usize) -> Result<Matrix>;
    /// A fixed evaluation batch, disjoint in sampling from training batches
    /// where the source allows it.
    fn holdout(&mut self, size: usize) -> Result<Matrix>;
    /// Rows used to estimate statistics before training.
    fn warmup(&mut self, size: usize) -> Result<Matrix>;
}

const TRAIN_STREAM: u64 = 10;
const HOLDOUT_STREAM: u64 = 11;
const WARMUP_STREAM: u64 = 12;

/// Fresh samples from a ground-truth dictionary.
pub struct SyntheticSource {
    gt: GroundTruth,
    rng: Rng,
}

impl SyntheticSource {
    pub fn new(gt: GroundTruth, rng: &Rng) -> Result<Self> {
        SampleStream::new(&gt, rng)?;
        Ok(SyntheticSource {
            gt,
            rng: rng.clone(),
        })
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    fn draw(&self, stream: u64, first: u64, size: usize) -> Result<Matrix> {
        Ok(SampleStream::new(&self.gt, &self.rng.fork(stream))?.batch_matrix(first, size))
    }
}

impl DataSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.gt.n()
    }

    fn batch(&mut self, index: u64, size: usize) -> Result<Matrix> {
        self.draw(TRAIN_STREAM, index * size as u64, size)
    }

    fn holdout(&mut self, size: usize) -> Result<Matrix> {
        self.draw(HOLDOUT_STREAM, 0, size)
    }

    fn warmup(&mut self, size: usize) -> Result<Matrix> {
        self.draw(WARMUP_STREAM, 0, size)
    }
}

/// Rows of an activation dump, reshuffled deterministically every epoch.
pub struct DumpSource {
    rows: Matrix,
    rng: Rng,
    epoch: Option<(u64, Vec<usize>)>,
}

impl DumpSource {
    pub fn new(rows: Matrix, rng: &Rng) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::Data("activation dump has no rows".into()));
        }
        Ok(DumpSource {
            rows,
            rng: rng.clone(),
            epoch: None,
        })
    }

    fn permutation(&self, stream: u64) -> Vec<usize> {
        let mut rng = self.rng.fork(stream);
        let mut perm: Vec<usize> = (0..self.rows.rows()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        perm
    }

    fn fixed(&self, stream: u64, size: usize) -> Matrix {
        let perm = self.permutation(stream);
        let picks: Vec<usize> = (0..size).map(|i| perm[i % perm.len()]).collect();
        self.rows.select_rows(&picks)
    }
}

impl DataSource for DumpSource {
    fn dim(&self) -> usize {
        self.rows.cols()
    }

    fn batch(&mut self, index: u64, size: usize) -> Result<Matrix> {
        let total = self.rows.rows() as u64;
        let mut picks = Vec::with_capacity(size);
        for i in 0..size as u64 {
            let pos = index * size as u64 + i;
            let epoch = pos / total;
            if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
                let perm = self.permutation(TRAIN_STREAM + (epoch << 8));
                self.epoch = Some((epoch, perm));
            }
            picks.push(self.epoch.as_ref().unwrap().1[(pos % total) as usize]);
        }
        Ok(self.rows.select_rows(&picks))
    }

    fn holdout(&mut self, size: usize) -> Result<Matrix> {
        Ok(self.fixed(HOLDOUT_STREAM, size))
    }

    fn warmup(&mut self, size: usize) -> Result<Matrix> {
        Ok(self.fixed(WARMUP_STREAM, size.min(self.rows.rows())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub reconstruction: f64,
    pub l0: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    /// Steps completed when the record was taken.
    pub step: u64,
    /// Means over the interval's training batches.
    pub loss: f64,
    pub reconstruction: f64,
    pub measured_l0: f64,
    /// Held-out batch metrics.
    pub holdout_reconstruction: f64,
    pub explained_variance: f64,
    /// Latents firing with frequency below the dead threshold this interval.
    pub dead_count: usize,
    pub lambda: f64,
    pub batch_threshold: Option<f64>,
    pub min_cosine_to_init: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSnapshot {
    pub step: u64,
    pub min_cosine: f64,
    pub mean_cosine: f64,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub arch: Arch,
    pub freeze_mode: FreezeMode,
    pub steps: u64,
    pub batch: usize,
    pub intervals: Vec<IntervalRecord>,
    pub snapshots: Vec<DriftSnapshot>,
    pub final_lambda: f64,
    pub antipodal_fallbacks: u64,
    #[serde(skip)]
    pub per_step: Vec<StepRecord>,
}

impl TrainReport {
    pub fn write_steps_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "step,loss,reconstruction,l0,lambda")?;
        for r in &self.per_step {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.step, r.loss, r.reconstruction, r.l0, r.lambda
            )?;
        }
        Ok(())
    }

    pub fn write_intervals_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "step,loss,reconstruction,measured_l0,holdout_reconstruction,explained_variance,dead_count,lambda,batch_threshold,min_cosine_to_init"
        )?;
        for r in &self.intervals {
            let thr = r.batch_threshold.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.loss,
                r.reconstruction,
                r.measured_l0,
                r.holdout_reconstruction,
                r.explained_variance,
                r.dead_count,
                r.lambda,
                thr,
                r.min_cosine_to_init
            )?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct IntervalAcc {
    steps: u64,
    loss: f64,
    reconstruction: f64,
    l0: f64,
    samples: u64,
    firing: Vec<u64>,
}

/// Owns the model, optimizer and freeze state for one run.
pub struct Trainer<'a> {
    model: SaeModel,
    opt: OptimizerState,
    freeze: FreezeSpec,
    w_enc_init: Option<Matrix>,
    cfg: TrainConfig,
    penalty: Penalty,
    lambda: f64,
    source: &'a mut dyn DataSource,
    holdout: Matrix,
    step: u64,
    snapshot_steps: Vec<u64>,
    acc: IntervalAcc,
    report: TrainReport,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: SaeModel,
        source: &'a mut dyn DataSource,
        cfg: TrainConfig,
        freeze_mode: FreezeMode,
        tau: f64,
        lambda: f64,
    ) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if source.dim() != model.n() {
            return Err(Error::shape(format!(
                "data has dimension {}, model expects {}",
                source.dim(),
                model.n()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!(
                "lambda {lambda} must be finite and >= 0"
            )));
        }
        let freeze = FreezeSpec::capture(&model, freeze_mode, tau)?;
        let w_enc_init = (freeze_mode == FreezeMode::FrozenEncoder).then(|| model.w_enc().clone());
        let holdout = source.holdout(cfg.holdout)?;
        let report = TrainReport {
            arch: model.arch(),
            freeze_mode,
            steps: cfg.steps,
            batch: cfg.batch,
            intervals: Vec::new(),
            snapshots: Vec::new(),
            final_lambda: lambda,
            antipodal_fallbacks: 0,
            per_step: Vec::with_capacity(cfg.steps as usize),
        };
        let m = model.m();
        let mut trainer = Trainer {
            penalty: Penalty::for_arch(model.arch()),
            opt: OptimizerState::new(cfg.optimizer),
            snapshot_steps: cfg.snapshot_steps(),
            model,
            freeze,
            w_enc_init,
            cfg,
            lambda,
            source,
            holdout,
            step: 0,
            acc: IntervalAcc {
                firing: vec![0; m],
                ..Default::default()
            },
            report,
        };
        trainer.snapshot()?;
        Ok(trainer)
    }

    pub fn model(&self) -> &SaeModel {
        &self.model
    }

    pub fn freeze(&self) -> &FreezeSpec {
        &self.freeze
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// One optimization step on the next batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let x = self.source.batch(self.step, self.cfg.batch)?;
        let cache = forward_train(&self.model, &x)?;
        let parts = cache_loss(&x, &cache, self.lambda, self.penalty)?;
        if !parts.total.is_finite() {
            return Err(self.non_finite(parts.total));
        }
        let grads = backward(
            &self.model,
            &x,
            &cache,
            self.lambda,
            self.penalty,
            self.freeze.mode,
            self.cfg.ste_bandwidth,
        )?;
        adamw_step(&mut self.model, &grads, &mut self.opt, self.freeze.mode);

        if self.model.arch() == Arch::Relu && self.freeze.mode == FreezeMode::None {
            normalize_rows(&mut self.model.w_dec);
            self.model.touch();
        }
        if self.freeze.mode == FreezeMode::SoftFrozenDecoder {
            self.freeze.project(&mut self.model)?;
        }
        if self.model.arch().uses_batch_threshold() {
            if let Some(v) = cache.min_selected {
                let d = self.cfg.threshold_decay;
                self.model.batch_threshold = Some(match self.model.batch_threshold {
                    Some(t) => d * t + (1.0 - d) * v,
                    None => v,
                });
            }
        }
        let l0 = cache.codes.mean_l0();
        if matches!(self.model.arch(), Arch::Relu | Arch::JumpRelu) {
            self.lambda = self
                .cfg
                .controller
                .update(l0, self.model.k_target(), self.lambda);
        }

        self.step += 1;
        let record = StepRecord {
            step: self.step,
            loss: parts.total,
            reconstruction: parts.reconstruction,
            l0,
            lambda: self.lambda,
        };
        self.report.per_step.push(record.clone());
        self.acc.steps += 1;
        self.acc.loss += parts.total;
        self.acc.reconstruction += parts.reconstruction;
        self.acc.l0 += l0;
        self.acc.samples += x.rows() as u64;
        cache.codes.accumulate_firing(&mut self.acc.firing);

        if self.step.is_multiple_of(self.cfg.log_interval) || self.step == self.cfg.steps {
            self.log_interval()?;
        }
        if self.snapshot_steps.binary_search(&self.step).is_ok() {
            self.snapshot()?;
        }
        Ok(record)
    }

    /// Runs the remaining steps and returns the trained model and report.
    pub fn run(mut self) -> Result<(SaeModel, TrainReport)> {
        while self.step < self.cfg.steps {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> (SaeModel, TrainReport) {
        self.report.final_lambda = self.lambda;
        self.report.antipodal_fallbacks = self.freeze.antipodal_fallbacks;
        (self.model, self.report)
    }

    fn non_finite(&self, loss: f64) -> Error {
        let w_enc = self
            .model
            .w_enc()
            .as_slice()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let w_dec = self
            .model
            .w_dec()
            .as_slice()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        Error::NonFinite {
            step: self.step,
            detail: format!(
                "loss {loss}, lambda {}, |W_enc| {w_enc}, |W_dec| {w_dec}, params finite: {}",
                self.lambda,
                self.model.w_enc().is_finite() && self.model.w_dec().is_finite()
            ),
        }
    }

    fn log_interval(&mut self) -> Result<()> {
        let acc = std::mem::take(&mut self.acc);
        let steps = acc.steps.max(1) as f64;
        let samples = acc.samples.max(1) as f64;
        let dead_count = acc
            .firing
            .iter()
            .filter(|c| (**c as f64 / samples) < DEAD_FREQUENCY)
            .count();
        self.acc.firing = vec![0; self.model.m()];

        let cache = forward_train(&self.model, &self.holdout)?;
        let recon = cache.reconstruction();
        let holdout_reconstruction = super::grad::mse(&self.holdout, recon)?;
        let explained_variance = explained_variance(&self.holdout, recon).unwrap_or(f64::NAN);
        let cos = cosine_to_init(self.model.w_dec(), self.freeze.w_dec_init())?;
        let min_cosine_to_init = cos.iter().copied().fold(f64::INFINITY, f64::min);
        self.check_freeze(min_cosine_to_init)?;

        self.report.intervals.push(IntervalRecord {
            step: self.step,
            loss: acc.loss / steps,
            reconstruction: acc.reconstruction / steps,
            measured_l0: acc.l0 / steps,
            holdout_reconstruction,
            explained_variance,
            dead_count,
            lambda: self.lambda,
            batch_threshold: self.model.batch_threshold(),
            min_cosine_to_init,
        });
        log::info!(
            "step {}/{}: loss {:.5} l0 {:.2} holdout ev {:.4} dead {} lambda {:.3e}",
            self.step,
            self.cfg.steps,
            acc.loss / steps,
            acc.l0 / steps,
            explained_variance,
            dead_count,
            self.lambda
        );
        Ok(())
    }

    fn snapshot(&mut self) -> Result<()> {
        let cos = cosine_to_init(self.model.w_dec(), self.freeze.w_dec_init())?;
        let min_cosine = cos.iter().copied().fold(f64::INFINITY, f64::min);
        let mean_cosine = cos.iter().sum::<f64>() / cos.len().max(1) as f64;
        self.check_freeze(min_cosine)?;
        let histogram = Histogram::from_values(&cos, &cosine_edges(self.cfg.histogram_bins))?;
        self.report.snapshots.push(DriftSnapshot {
            step: self.step,
            min_cosine,
            mean_cosine,
            histogram,
        });
        Ok(())
    }

    fn check_freeze(&self, min_cosine: f64) -> Result<()> {
        match self.freeze.mode {
            FreezeMode::FrozenDecoder if !self.model.w_dec().bit_eq(self.freeze.w_dec_init()) => {
                Err(Error::State(format!(
                    "frozen decoder changed by step {}",
                    self.step
                )))
            }
            FreezeMode::FrozenEncoder
                if !self
                    .model
                    .w_enc()
                    .bit_eq(self.w_enc_init.as_ref().expect("captured")) =>
            {
                Err(Error::State(format!(
                    "frozen encoder changed by step {}",
                    self.step
                )))
            }
            FreezeMode::SoftFrozenDecoder if min_cosine < self.freeze.tau - 1e-9 => {
                Err(Error::State(format!(
                    "decoder left the cap at step {}: min cosine {min_cosine}",
                    self.step
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Trains `model` on `source` for `cfg.steps` steps.
pub fn train(
    model: SaeModel,
    source: &mut dyn DataSource,
    cfg: &TrainConfig,
    freeze_mode: FreezeMode,
    tau: f64,
    lambda: f64,
) -> Result<(SaeModel, TrainReport)> {
    Trainer::new(model, source, cfg.clone(), freeze_mode, tau, lambda)?.run()
}
