//! End-to-end command runs on a small synthetic setup.

use std::fs;

use saebench_core::experiment::{cmd_eval, cmd_train, DataConfig, EvalConfig, ExperimentConfig};
use saebench_core::io::{load_checkpoint, read_dump};
use saebench_core::{Error, FreezeMode, SaeConfig, SyntheticConfig, TrainConfig};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig::Synthetic(SyntheticConfig {
            n: 10,
            m_true: 40,
            p_const: 0.05,
            ..Default::default()
        }),
        sae: SaeConfig {
            n: 10,
            expansion: 4,
            k_target: 2,
            ..Default::default()
        },
        train: TrainConfig {
            steps: 60,
            batch: 128,
            log_interval: 20,
            holdout: 256,
            ..Default::default()
        },
        eval: EvalConfig {
            samples: 4000,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn frozen_decoder_survives_save_and_eval() {
    let mut cfg = small();
    cfg.sae.freeze_mode = FreezeMode::FrozenDecoder;
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&cfg, dir.path()).unwrap();
    let ck = load_checkpoint(dir.path().join("checkpoint")).unwrap();
    assert!(ck.model.w_dec().bit_eq(ck.w_dec_init.as_ref().unwrap()));
    let eval = cmd_eval(
        &cfg,
        &dir.path().join("checkpoint"),
        &dir.path().join("eval"),
    )
    .unwrap();
    let hist = eval.cosine_to_init.unwrap();
    // every row sits in the top bin
    assert_eq!(*hist.counts.last().unwrap(), 40);
}

#[test]
fn truncated_fixture_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.saea");
    let mut bytes = b"SAEA".to_vec();
    bytes.extend(1u32.to_le_bytes());
    bytes.extend(1u64.to_le_bytes());
    bytes.extend(2u64.to_le_bytes());
    bytes.extend(1.5f32.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    match read_dump(&path) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 28),
        other => panic!("expected format error, got {other:?}"),
    }
    fs::write(&path, b"").unwrap();
    assert!(matches!(
        read_dump(&path),
        Err(Error::Format { offset: 0, .. })
    ));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    one.install(|| cmd_train(&cfg, a.path())).unwrap();
    four.install(|| cmd_train(&cfg, b.path())).unwrap();
    for f in [
        "train_report.json",
        "eval_report.json",
        "train_intervals.csv",
        "recovery.csv",
        "checkpoint/manifest.json",
        "checkpoint/w_enc.saea",
        "checkpoint/w_dec.saea",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    cmd_train(&cfg, a.path()).unwrap();
    let echoed = ExperimentConfig::load(a.path().join("config.json")).unwrap();
    assert_eq!(echoed, cfg);
    let b = tempfile::tempdir().unwrap();
    cmd_train(&echoed, b.path()).unwrap();
    assert_eq!(
        fs::read(a.path().join("eval_report.json")).unwrap(),
        fs::read(b.path().join("eval_report.json")).unwrap()
    );
}
