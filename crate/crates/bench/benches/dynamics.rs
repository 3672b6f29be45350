use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use nsvgd_bench::gaussian_cloud;
use nsvgd_core::transport::{sliced_w2, w2_exact, DEFAULT_PROJECTIONS, DEFAULT_SUPPORT_CAP};
use nsvgd_core::{ksd_squared, noisy_svgd_step, rbf_kernel, standard_gaussian, RngStream, WeightedPool};

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("noisy_svgd_step");
    let kernel = rbf_kernel(1.0).unwrap();
    let rng = RngStream::new(1);
    for &(n, d) in &[(100, 10), (500, 10), (500, 100), (2000, 1)] {
        let e = gaussian_cloud(n, d);
        let target = standard_gaussian(d).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(format!("n{n}_d{d}")), &e, |b, e| {
            b.iter(|| noisy_svgd_step(black_box(e), &kernel, &target, 0.1, 0.5, &rng).unwrap())
        });
    }
    g.finish();
}

fn ksd(c: &mut Criterion) {
    let mut g = c.benchmark_group("ksd_squared");
    let kernel = rbf_kernel(1.0).unwrap();
    for &n in &[100, 500] {
        let e = gaussian_cloud(n, 5);
        let target = standard_gaussian(5).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &e, |b, e| {
            b.iter(|| ksd_squared(black_box(e.positions()), 5, &target, &kernel).unwrap())
        });
    }
    g.finish();
}

fn w2(c: &mut Criterion) {
    let mut g = c.benchmark_group("w2");
    g.sample_size(10);
    let a = WeightedPool::from_ensemble(&gaussian_cloud(300, 3));
    let b = WeightedPool::uniform(gaussian_cloud(301, 3).positions()[3..].to_vec(), 3).unwrap();
    g.bench_function("exact_300", |bch| {
        bch.iter(|| w2_exact(black_box(&a), &b, DEFAULT_SUPPORT_CAP).unwrap())
    });
    g.bench_function("sliced_300", |bch| {
        bch.iter(|| sliced_w2(black_box(&a), &b, DEFAULT_PROJECTIONS, 5).unwrap())
    });
    g.finish();
}

criterion_group!(benches, step, ksd, w2);
criterion_main!(benches);
