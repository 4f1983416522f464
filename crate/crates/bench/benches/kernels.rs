use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sidae::augment::{make_views, AugmentationConfig};
use sidae::data::synthetic_dataset;
use sidae::models::ModelKind;
use sidae::train::{pretrain_epoch, TrainState};
use sidae_bench::{endless_pretrain, pattern, pattern_parameter, tiny_model};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = pattern(&[n, n]);
        let b = pattern(&[n, n]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let x = pattern(&[16, 64, 16, 16]);
    let w = pattern_parameter(&[64, 64, 3, 3]);
    c.bench_function("conv2d_64x64_16px_b16", |b| b.iter(|| black_box(x.conv2d(&w, 1, 1).unwrap())));
    c.bench_function("conv2d_64x64_16px_b16_backward", |b| {
        b.iter(|| {
            w.zero_grad();
            x.conv2d(&w, 1, 1).unwrap().sum().backward().unwrap();
        })
    });
}

fn augmentation(c: &mut Criterion) {
    let data = synthetic_dataset(1, 1, 0).unwrap();
    let img = data.image(0);
    let cfg = AugmentationConfig::default();
    c.bench_function("make_views", |b| {
        let mut stream = 0;
        b.iter(|| {
            stream += 1;
            black_box(make_views(&img, &cfg, 0, stream).unwrap())
        })
    });
}

fn train_epoch(c: &mut Criterion) {
    let data = synthetic_dataset(16, 4, 0).unwrap();
    let mut group = c.benchmark_group("tiny_epoch_64_images");
    group.sample_size(10);
    for kind in [ModelKind::Simsiam, ModelKind::Dae, ModelKind::Sidae] {
        let model = tiny_model(kind);
        let cfg = endless_pretrain(32);
        let mut state = TrainState::new(&cfg.optimizer);
        group.bench_function(kind.name(), |b| {
            b.iter(|| black_box(pretrain_epoch(&model, &mut state, &data, &cfg, 0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, conv, augmentation, train_epoch);
criterion_main!(benches);
