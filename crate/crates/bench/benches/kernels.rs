use std::hint::black_box;

use cloudfill::detect::{detect_clouds, DetectorConfig};
use cloudfill::linalg::{economy_svd, soft_threshold, svt, tr_mul};
use cloudfill::{Dims, TemporalOperator};
use cloudfill_bench::{cloudy_sequence, random_matrix};
use criterion::{criterion_group, criterion_main, Criterion};

fn svd(c: &mut Criterion) {
    let tall = random_matrix(4096, 100, 1);
    let square = random_matrix(200, 150, 2);
    let mut g = c.benchmark_group("svd");
    g.sample_size(20);
    g.bench_function("economy_4096x100", |b| {
        b.iter(|| economy_svd(black_box(&tall)).unwrap())
    });
    g.bench_function("economy_200x150", |b| {
        b.iter(|| economy_svd(black_box(&square)).unwrap())
    });
    g.bench_function("svt_4096x100", |b| {
        b.iter(|| svt(black_box(&tall), 5.0).unwrap())
    });
    g.finish();
}

fn elementwise(c: &mut Criterion) {
    let x = random_matrix(4096, 100, 3);
    let u = random_matrix(4096, 20, 4);
    c.bench_function("soft_threshold_4096x100", |b| {
        b.iter(|| soft_threshold(black_box(&x), 0.3).unwrap())
    });
    c.bench_function("tr_mul_4096x100_by_4096x20", |b| {
        b.iter(|| tr_mul(black_box(&x), &u))
    });
}

fn temporal(c: &mut Criterion) {
    let x = random_matrix(4096, 300, 5);
    let op = TemporalOperator::new(3, 100);
    c.bench_function("diff_norm_sq_4096x300", |b| {
        b.iter(|| op.diff_norm_sq(black_box(&x)))
    });
    c.bench_function("laplacian_4096x300", |b| {
        b.iter(|| op.laplacian(black_box(&x)))
    });
}

fn detection(c: &mut Criterion) {
    let seq = cloudy_sequence(Dims::new(64, 64, 3, 50).unwrap(), 6);
    let cfg = DetectorConfig::default();
    c.bench_function("detect_clouds_64x64x3x50", |b| {
        b.iter(|| detect_clouds(black_box(&seq), &cfg).unwrap())
    });
}

criterion_group!(benches, svd, elementwise, temporal, detection);
criterion_main!(benches);
