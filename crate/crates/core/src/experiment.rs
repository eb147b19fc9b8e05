// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration and the commands behind the CLI.
//!
//! Every command is a deterministic function of its configuration: outputs
//! written with the same config and seed are byte-identical. Wall-clock
//! facts go to a separate `metadata.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    cap_bound, cosine_edges, cosine_to_init_histogram, dead_fraction, feature_recovery,
    frequency_binned_recovery, recovered_count, CapBound, EvalReport, RECOVERY_THRESHOLD,
};
use crate::io::{
    encode_matrix, estimate_covariance, read_dump, save_checkpoint, sha256_hex, write_dump,
    Precision,
};
use crate::linalg::{Matrix, Rng};
use crate::sae::{init_model, reconstruct, Arch, FreezeMode, InitScheme, SaeConfig, SaeModel};
use crate::synthetic::{generate_ground_truth, GroundTruth, SampleStream, SyntheticConfig};
use crate::train::{DataSource, DumpSource, SyntheticSource, TrainConfig, TrainReport, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    Dump { path: PathBuf },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fresh synthetic samples to evaluate on; dumps use every row.
    pub samples: usize,
    /// Rows processed at a time.
    pub chunk: usize,
    pub frequency_bins: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 200_000,
            chunk: 8192,
            frequency_bins: 20,
            p_lo: 10f64.powf(-5.5),
            p_hi: 10f64.powf(-1.2),
            histogram_bins: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.samples < 2 {
            errs.push("eval.samples must be >= 2".into());
        }
        if self.chunk == 0 {
            errs.push("eval.chunk must be >= 1".into());
        }
        if self.frequency_bins == 0 {
            errs.push("eval.frequency_bins must be >= 1".into());
        }
        if !(self.p_lo > 0.0 && self.p_lo < self.p_hi) {
            errs.push("eval needs 0 < p_lo < p_hi".into());
        }
        if self.histogram_bins == 0 {
            errs.push("eval.histogram_bins must be >= 1".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub sae: SaeConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            sae: SaeConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

// Sub-streams of the experiment seed.
const INIT_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

/// Reduced budget for smoke runs and CI.
pub const QUICK_STEPS: u64 = 2000;
pub const QUICK_EVAL_SAMPLES: usize = 50_000;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(v) => Error::Config(
                v.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    /// Every problem with the configuration at once.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.sae.validate();
        errs.extend(self.train.validate());
        errs.extend(self.eval.validate());
        if let DataConfig::Synthetic(s) = &self.data {
            errs.extend(s.validate());
            if s.n != self.sae.n {
                errs.push(format!(
                    "sae.n {} differs from synthetic.n {}",
                    self.sae.n, s.n
                ));
            }
        }
        errs
    }

    pub fn checked(self) -> Result<Self> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Shrinks the budget for a fast run.
    pub fn make_quick(&mut self) {
        self.train.steps = self.train.steps.min(QUICK_STEPS);
        self.train.log_interval = self.train.log_interval.min(100);
        self.eval.samples = self.eval.samples.min(QUICK_EVAL_SAMPLES);
    }

    /// Canonical JSON of the effective configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of every setting that affects results; the output location
    /// is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(c.to_json().as_bytes())
    }

    fn root(&self) -> Rng {
        Rng::new(self.seed)
    }
}

/// The training data of an experiment, plus its ground truth when known.
pub struct Data {
    pub source: Box<dyn DataSource>,
    pub ground_truth: Option<GroundTruth>,
    pub dump: Option<Matrix>,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let rng = cfg.root().fork(DATA_STREAM);
    let data = match &cfg.data {
        DataConfig::Synthetic(s) => {
            let gt = generate_ground_truth(s)?;
            Data {
                source: Box::new(SyntheticSource::new(gt.clone(), &rng)?),
                ground_truth: Some(gt),
                dump: None,
            }
        }
        DataConfig::Dump { path } => {
            let rows = read_dump(path)?;
            Data {
                source: Box::new(DumpSource::new(rows.clone(), &rng)?),
                ground_truth: None,
                dump: Some(rows),
            }
        }
    };
    if data.source.dim() != cfg.sae.n {
        return Err(Error::Config(vec![format!(
            "data has dimension {}, sae.n is {}",
            data.source.dim(),
            cfg.sae.n
        )]));
    }
    Ok(data)
}

/// Initial model, estimating the covariance from warm-up rows when needed.
pub fn initial_model(cfg: &ExperimentConfig, source: &mut dyn DataSource) -> Result<SaeModel> {
    let cov = match cfg.sae.init_scheme {
        InitScheme::Iso => None,
        InitScheme::Cov => Some(estimate_covariance(
            &source.warmup(cfg.train.covariance_samples)?,
        )?),
    };
    init_model(&cfg.sae, &mut cfg.root().fork(INIT_STREAM), cov.as_ref())
}

pub struct TrainOutcome {
    pub model: SaeModel,
    pub report: TrainReport,
    pub w_dec_init: Matrix,
    pub data: Data,
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut data = load_data(cfg)?;
    let model = initial_model(cfg, data.source.as_mut())?;
    let w_dec_init = model.w_dec().clone();
    let trainer = Trainer::new(
        model,
        data.source.as_mut(),
        cfg.train.clone(),
        cfg.sae.freeze_mode,
        cfg.sae.tau,
        cfg.sae.lambda,
    )?;
    let (model, report) = trainer.run()?;
    Ok(TrainOutcome {
        model,
        report,
        w_dec_init,
        data,
    })
}

/// Streams `total` rows through the model in chunks and scores it.
fn stream_metrics(
    model: &SaeModel,
    total: usize,
    chunk: usize,
    mut rows: impl FnMut(usize, usize) -> Matrix,
) -> Result<(f64, f64, f64)> {
    let n = model.n();
    // pass 1: the evaluation set's own mean
    let mut sum = vec![0.0; n];
    let mut start = 0;
    while start < total {
        let len = chunk.min(total - start);
        let x = rows(start, len);
        for row in x.row_iter() {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        start += len;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / total as f64).collect();

    // pass 2: residual and total sums of squares, L0 and firing counts
    let (mut resid, mut spread, mut active) = (0.0, 0.0, 0usize);
    let mut firing = vec![0u64; model.m()];
    let mut start = 0;
    while start < total {
        let len = chunk.min(total - start);
        let x = rows(start, len);
        let (x_hat, codes) = reconstruct(model, &x)?;
        for (row, hat) in x.row_iter().zip(x_hat.row_iter()) {
            for ((v, h), mu) in row.iter().zip(hat).zip(&mean) {
                resid += (v - h) * (v - h);
                spread += (v - mu) * (v - mu);
            }
        }
        active += codes.nnz();
        codes.accumulate_firing(&mut firing);
        start += len;
    }
    if spread == 0.0 {
        return Err(Error::Data("evaluation rows have zero variance".into()));
    }
    Ok((
        1.0 - resid / spread,
        active as f64 / total as f64,
        dead_fraction(&firing, total),
    ))
}

/// Scores a trained model on fresh samples (or the dump's rows).
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &SaeModel,
    w_dec_init: Option<&Matrix>,
    data: &Data,
) -> Result<EvalReport> {
    let chunk = cfg.eval.chunk;
    let (samples, (ev, l0, dead)) = match (&data.ground_truth, &data.dump) {
        (Some(gt), _) => {
            let stream = SampleStream::new(gt, &cfg.root().fork(EVAL_STREAM))?;
            let total = cfg.eval.samples;
            (
                total,
                stream_metrics(model, total, chunk, |s, len| {
                    stream.batch_matrix(s as u64, len)
                })?,
            )
        }
        (None, Some(rows)) => (
            rows.rows(),
            stream_metrics(model, rows.rows(), chunk, |s, len| {
                rows.row_range(s, s + len)
            })?,
        ),
        (None, None) => return Err(Error::Data("no evaluation data".into())),
    };

    let (recovery, frequency_bins, mean_prob_recovered, mean_prob_all) = match &data.ground_truth {
        Some(gt) => {
            let rec = feature_recovery(&gt.features, model.w_dec())?;
            let bins = frequency_binned_recovery(
                &rec,
                &gt.probs,
                cfg.eval.frequency_bins,
                cfg.eval.p_lo,
                cfg.eval.p_hi,
            )?;
            let hit: Vec<f64> = rec
                .iter()
                .zip(&gt.probs)
                .filter(|(r, _)| **r >= RECOVERY_THRESHOLD)
                .map(|(_, p)| *p)
                .collect();
            let mean_hit = (!hit.is_empty()).then(|| hit.iter().sum::<f64>() / hit.len() as f64);
            let mean_all = gt.probs.iter().sum::<f64>() / gt.probs.len() as f64;
            (rec, bins, mean_hit, Some(mean_all))
        }
        None => (Vec::new(), Vec::new(), None, None),
    };
    let count = recovered_count(&recovery, RECOVERY_THRESHOLD);
    let bound: CapBound = cap_bound(model.n(), cfg.sae.tau, model.m())?;
    let cosine_to_init = match w_dec_init {
        Some(init) => Some(cosine_to_init_histogram(
            model.w_dec(),
            init,
            &cosine_edges(cfg.eval.histogram_bins),
        )?),
        None => None,
    };
    Ok(EvalReport {
        samples,
        explained_variance: ev,
        measured_l0: l0,
        dead_fraction: dead,
        recovered_fraction: if recovery.is_empty() {
            0.0
        } else {
            count as f64 / recovery.len() as f64
        },
        recovery,
        recovery_threshold: RECOVERY_THRESHOLD,
        recovered_count: count,
        frequency_bins,
        mean_prob_recovered,
        mean_prob_all,
        cap_bound_log10_single: bound.log10_single,
        cap_bound_log10_union: bound.log10_union,
        cosine_to_init,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_csv(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, &buf)
}

/// Wall-clock facts, kept apart from the deterministic outputs.
#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    unix_time: u64,
    seconds: f64,
    threads: usize,
    config_hash: String,
}

pub fn write_metadata(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    seconds: f64,
) -> Result<()> {
    let unix_time = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("metadata.json"),
        &Metadata {
            command,
            unix_time,
            seconds,
            threads: rayon::current_num_threads(),
            config_hash: cfg.hash(),
        },
    )
}

/// Writes the effective configuration next to a command's outputs.
pub fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut text = cfg.to_json();
    text.push('\n');
    write_file(&dir.join("config.json"), text.as_bytes())
}

pub fn write_eval_outputs(dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&dir.join("eval_report.json"), report)?;
    write_csv(&dir.join("recovery.csv"), |out| {
        writeln!(out, "feature,max_cosine")?;
        for (i, r) in report.recovery.iter().enumerate() {
            writeln!(out, "{i},{r}")?;
        }
        Ok(())
    })?;
    write_csv(&dir.join("frequency_bins.csv"), |out| {
        writeln!(out, "p_lo,p_hi,features,recovered,fraction")?;
        for b in &report.frequency_bins {
            let f = b.fraction.map(|f| f.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{f}",
                b.p_lo, b.p_hi, b.features, b.recovered
            )?;
        }
        Ok(())
    })?;
    if let Some(h) = &report.cosine_to_init {
        write_csv(&dir.join("cosine_to_init.csv"), |out| {
            writeln!(out, "lo,hi,count")?;
            for (i, c) in h.counts.iter().enumerate() {
                writeln!(out, "{},{},{c}", h.edges[i], h.edges[i + 1])?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Writes `features.saea`, `probs.saea` and `samples.saea` (`rows` fresh
/// samples) for a synthetic configuration.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path, rows: usize) -> Result<GroundTruth> {
    let DataConfig::Synthetic(s) = &cfg.data else {
        return Err(Error::Config(vec![
            "gen-data needs a synthetic data section".into(),
        ]));
    };
    if rows == 0 {
        return Err(Error::Config(
            vec!["gen-data needs at least one row".into()],
        ));
    }
    let gt = generate_ground_truth(s)?;
    write_file(
        &out.join("features.saea"),
        &encode_matrix(&gt.features, Precision::F64)?,
    )?;
    write_file(
        &out.join("probs.saea"),
        &encode_matrix(&Matrix::row_vector(&gt.probs)?, Precision::F64)?,
    )?;
    let stream = SampleStream::new(&gt, &cfg.root().fork(DATA_STREAM))?;
    write_dump(out.join("samples.saea"), &stream.batch_matrix(0, rows))?;
    echo_config(out, cfg)?;
    Ok(gt)
}

/// Trains, checkpoints and evaluates; returns the evaluation.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(TrainReport, EvalReport)> {
    let outcome = run_train(cfg)?;
    let hash = cfg.hash();
    save_checkpoint(
        out.join("checkpoint"),
        &outcome.model,
        Some(&outcome.w_dec_init),
        cfg.sae.freeze_mode,
        cfg.sae.tau,
        outcome.report.steps,
        &hash,
    )?;
    write_json(&out.join("train_report.json"), &outcome.report)?;
    write_csv(&out.join("train_steps.csv"), |o| {
        outcome.report.write_steps_csv(o)
    })?;
    write_csv(&out.join("train_intervals.csv"), |o| {
        outcome.report.write_intervals_csv(o)
    })?;
    let eval = evaluate(
        cfg,
        &outcome.model,
        Some(&outcome.w_dec_init),
        &outcome.data,
    )?;
    write_eval_outputs(out, &eval)?;
    echo_config(out, cfg)?;
    Ok((outcome.report, eval))
}

/// Evaluates a saved checkpoint against the configured data.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    let ck = crate::io::load_checkpoint(checkpoint)?;
    if ck.model.n() != cfg.sae.n {
        return Err(Error::shape(format!(
            "checkpoint has n = {}, config has {}",
            ck.model.n(),
            cfg.sae.n
        )));
    }
    let data = load_data(cfg)?;
    let eval = evaluate(cfg, &ck.model, ck.w_dec_init.as_ref(), &data)?;
    write_eval_outputs(out, &eval)?;
    echo_config(out, cfg)?;
    Ok(eval)
}

pub fn cmd_bound(n: usize, tau: f64, m: usize) -> Result<CapBound> {
    if n == 0 || m == 0 {
        return Err(Error::param("bound needs n >= 1 and m >= 1"));
    }
    cap_bound(n, tau, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    FreezeMode,
    Arch,
    L0,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeze_mode" => Ok(SweepAxis::FreezeMode),
            "arch" => Ok(SweepAxis::Arch),
            "l0" => Ok(SweepAxis::L0),
            _ => Err(Error::Config(vec![format!(
                "unknown sweep axis {s:?}; expected freeze_mode, arch or l0"
            )])),
        }
    }
}

pub const L0_LEVELS: [usize; 5] = [80, 115, 160, 225, 320];

/// The variants of a sweep, each a full configuration with its own
/// output directory under `out`.
pub fn sweep_variants(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    out: &Path,
) -> Vec<(String, ExperimentConfig)> {
    let mut variants = Vec::new();
    let mut push = |name: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c.output_dir = out.join(&name);
        variants.push((name, c));
    };
    match axis {
        SweepAxis::FreezeMode => {
            for mode in FreezeMode::ALL {
                push(mode.name().to_string(), &|c| c.sae.freeze_mode = mode);
            }
        }
        SweepAxis::Arch => {
            for arch in Arch::ALL {
                push(arch.name().to_string(), &|c| c.sae.arch = arch);
            }
        }
        SweepAxis::L0 => {
            for l0 in L0_LEVELS {
                push(format!("l0_{l0}"), &|c| c.sae.k_target = l0);
            }
        }
    }
    variants
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

fn metric_rows(variant: &str, train: &TrainReport, eval: &EvalReport) -> Vec<SweepRow> {
    let mut rows = vec![
        ("explained_variance", eval.explained_variance),
        ("measured_l0", eval.measured_l0),
        ("dead_fraction", eval.dead_fraction),
        ("recovered_count", eval.recovered_count as f64),
        ("recovered_fraction", eval.recovered_fraction),
        ("final_lambda", train.final_lambda),
    ];
    if let Some(p) = eval.mean_prob_recovered {
        rows.push(("mean_prob_recovered", p));
    }
    if let Some(p) = eval.mean_prob_all {
        rows.push(("mean_prob_all", p));
    }
    if let Some(s) = train.snapshots.last() {
        rows.push(("min_cosine_to_init", s.min_cosine));
        rows.push(("mean_cosine_to_init", s.mean_cosine));
    }
    rows.into_iter()
        .map(|(m, v)| SweepRow {
            variant: variant.to_string(),
            metric: m.to_string(),
            value: v,
        })
        .collect()
}

/// Trains and evaluates every variant along `axis`, writing each into its
/// own directory and a combined `sweep.csv` into `out`.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (name, variant) in sweep_variants(cfg, axis, out) {
        let variant = variant.checked()?;
        log::info!("sweep variant {name}");
        let (train, eval) = cmd_train(&variant, &variant.output_dir)?;
        rows.extend(metric_rows(&name, &train, &eval));
    }
    write_csv(&out.join("sweep.csv"), |o| {
        writeln!(o, "variant,metric,value")?;
        for r in &rows {
            writeln!(o, "{},{},{}", r.variant, r.metric, r.value)?;
        }
        Ok(())
    })?;
    echo_config(out, cfg)?;
    Ok(rows)
}

/// Bounds an evaluation must satisfy; unset fields are not checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    pub ev_min: Option<f64>,
    pub ev_max: Option<f64>,
    pub recovered_min: Option<f64>,
    pub recovered_max: Option<f64>,
    /// Minimum ratio of the recovered features' mean probability to the
    /// dictionary-wide mean.
    pub frequency_ratio_min: Option<f64>,
}

pub fn read_eval_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Every violated bound, described.
pub fn check_report(report: &EvalReport, exp: &Expectations) -> Vec<String> {
    let mut fails = Vec::new();
    let mut bound = |name: &str, value: f64, lo: Option<f64>, hi: Option<f64>| {
        if lo.is_some_and(|lo| !(value >= lo)) || hi.is_some_and(|hi| !(value <= hi)) {
            fails.push(format!(
                "{name} = {value} outside [{}, {}]",
                lo.unwrap_or(f64::NEG_INFINITY),
                hi.unwrap_or(f64::INFINITY)
            ));
        }
    };
    bound(
        "explained_variance",
        report.explained_variance,
        exp.ev_min,
        exp.ev_max,
    );
    bound(
        "recovered_fraction",
        report.recovered_fraction,
        exp.recovered_min,
        exp.recovered_max,
    );
    if let Some(min) = exp.frequency_ratio_min {
        match (report.mean_prob_recovered, report.mean_prob_all) {
            (Some(hit), Some(all)) if all > 0.0 => {
                bound("frequency_ratio", hit / all, Some(min), None)
            }
            _ => fails.push("frequency_ratio undefined: no recovered features".into()),
        }
    }
    fails
}
