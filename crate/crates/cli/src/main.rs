// SPDX-License-Identifier: MIT OR Apache-2.0

//! `saebench`: batch front end for the sparse autoencoder bench.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 a `check`
//! found the report outside its bounds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use saebench_core::experiment::{self, Expectations, SweepAxis};
use saebench_core::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "saebench",
    version,
    about = "Sparse autoencoder bench on superposition toy data"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON experiment config; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reduced step and sample budget.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground truth and sampled rows as activation dumps.
    GenData {
        #[arg(long, default_value_t = 65_536)]
        rows: usize,
    },
    /// Train, checkpoint and evaluate one model.
    Train,
    /// Evaluate a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the log10 spherical-cap probability bounds.
    Bound { n: usize, tau: f64, m: usize },
    /// Train every variant along one axis and write sweep.csv.
    Sweep {
        /// freeze_mode, arch or l0
        #[arg(long)]
        axis: String,
    },
    /// Check an eval_report.json against bounds.
    Check {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        ev_min: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        ev_max: Option<f64>,
        #[arg(long)]
        recovered_min: Option<f64>,
        #[arg(long)]
        recovered_max: Option<f64>,
        #[arg(long)]
        frequency_ratio_min: Option<f64>,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
    Check(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    if g.quick {
        cfg.make_quick();
    }
    Ok(cfg.checked()?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(threads) = g.threads {
        if threads == 0 {
            return Err(Failure::Invalid("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let started = Instant::now();
    let finish = |cfg: &ExperimentConfig, name: &str, dir: &Path| -> Result<(), Failure> {
        experiment::write_metadata(dir, name, cfg, started.elapsed().as_secs_f64())?;
        Ok(())
    };
    match &cli.command {
        Command::GenData { rows } => {
            let cfg = load_config(g)?;
            experiment::cmd_gen_data(&cfg, &cfg.output_dir, *rows)?;
            finish(&cfg, "gen-data", &cfg.output_dir)?;
            println!("wrote {} rows to {}", rows, cfg.output_dir.display());
        }
        Command::Train => {
            let cfg = load_config(g)?;
            let (_, eval) = experiment::cmd_train(&cfg, &cfg.output_dir)?;
            finish(&cfg, "train", &cfg.output_dir)?;
            print_eval(&eval);
        }
        Command::Eval { checkpoint } => {
            let cfg = load_config(g)?;
            let eval = experiment::cmd_eval(&cfg, checkpoint, &cfg.output_dir)?;
            finish(&cfg, "eval", &cfg.output_dir)?;
            print_eval(&eval);
        }
        Command::Bound { n, tau, m } => {
            let b = experiment::cmd_bound(*n, *tau, *m)?;
            println!("log10_single {:.4}", b.log10_single);
            println!("log10_union {:.4}", b.log10_union);
        }
        Command::Sweep { axis } => {
            let axis: SweepAxis = axis.parse()?;
            let cfg = load_config(g)?;
            let rows = experiment::cmd_sweep(&cfg, axis, &cfg.output_dir)?;
            finish(&cfg, "sweep", &cfg.output_dir)?;
            println!("variant,metric,value");
            for r in rows {
                println!("{},{},{}", r.variant, r.metric, r.value);
            }
        }
        Command::Check {
            report,
            ev_min,
            ev_max,
            recovered_min,
            recovered_max,
            frequency_ratio_min,
        } => {
            let report = experiment::read_eval_report(report)?;
            let exp = Expectations {
                ev_min: *ev_min,
                ev_max: *ev_max,
                recovered_min: *recovered_min,
                recovered_max: *recovered_max,
                frequency_ratio_min: *frequency_ratio_min,
            };
            let fails = experiment::check_report(&report, &exp);
            if !fails.is_empty() {
                return Err(Failure::Check(fails));
            }
            println!("check passed");
        }
    }
    Ok(())
}

fn print_eval(e: &saebench_core::EvalReport) {
    println!("explained_variance {:.6}", e.explained_variance);
    println!("measured_l0 {:.4}", e.measured_l0);
    println!("dead_fraction {:.6}", e.dead_fraction);
    if !e.recovery.is_empty() {
        println!(
            "recovered {} of {} ({:.4})",
            e.recovered_count,
            e.recovery.len(),
            e.recovered_fraction
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(fails)) => {
            for f in fails {
                eprintln!("check failed: {f}");
            }
            ExitCode::from(3)
        }
    }
}
