//! Hot paths at the toy scale: 100-dim inputs, 3200 latents, batch 1024.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use saebench_core::linalg::{matmul, Rng};
use saebench_core::sae::{encode_pre, init_model, reconstruct, Arch, SaeConfig};
use saebench_core::synthetic::{generate_ground_truth, SampleStream};
use saebench_core::train::{
    backward, forward_train, Penalty, SyntheticSource, TrainConfig, Trainer,
};
use saebench_core::{FreezeMode, Matrix, SyntheticConfig};

const BATCH: usize = 1024;

fn batch() -> Matrix {
    let gt = generate_ground_truth(&SyntheticConfig::default()).unwrap();
    SampleStream::new(&gt, &Rng::new(1))
        .unwrap()
        .batch_matrix(0, BATCH)
}

fn model(arch: Arch) -> saebench_core::SaeModel {
    let cfg = SaeConfig {
        arch,
        ..Default::default()
    };
    init_model(&cfg, &mut Rng::new(2), None).unwrap()
}

fn kernels(c: &mut Criterion) {
    let x = batch();
    let btk = model(Arch::BatchTopK);

    c.bench_function("matmul 1024x100 * 100x3200", |b| {
        b.iter(|| matmul(&x, btk.w_enc(), false, true).unwrap())
    });
    c.bench_function("sample batch", |b| {
        let gt = generate_ground_truth(&SyntheticConfig::default()).unwrap();
        let stream = SampleStream::new(&gt, &Rng::new(1)).unwrap();
        let mut i = 0;
        b.iter(|| {
            i += 1;
            stream.batch_matrix(i * BATCH as u64, BATCH)
        })
    });
    for arch in [Arch::TopK, Arch::BatchTopK, Arch::JumpRelu] {
        let m = model(arch);
        c.bench_function(&format!("encode {}", arch.name()), |b| {
            b.iter(|| encode_pre(&m, &x).unwrap())
        });
        c.bench_function(&format!("reconstruct {}", arch.name()), |b| {
            b.iter(|| reconstruct(&m, &x).unwrap())
        });
        c.bench_function(&format!("forward+backward {}", arch.name()), |b| {
            b.iter(|| {
                let cache = forward_train(&m, &x).unwrap();
                backward(
                    &m,
                    &x,
                    &cache,
                    1e-3,
                    Penalty::for_arch(arch),
                    FreezeMode::None,
                    1e-3,
                )
                .unwrap()
            })
        });
    }
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train step");
    group.sample_size(10);
    for arch in [Arch::TopK, Arch::BatchTopK] {
        group.bench_function(arch.name(), |b| {
            let gt = generate_ground_truth(&SyntheticConfig::default()).unwrap();
            let mut source = SyntheticSource::new(gt, &Rng::new(3)).unwrap();
            let cfg = TrainConfig {
                holdout: 1024,
                ..Default::default()
            };
            let mut trainer =
                Trainer::new(model(arch), &mut source, cfg, FreezeMode::None, 0.8, 1e-3).unwrap();
            b.iter_batched(|| (), |_| trainer.step().unwrap(), BatchSize::SmallInput)
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, train_step);
criterion_main!(benches);
