use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use proximal_core::dgp::{generate_longitudinal, generate_point, LongitudinalDgpSpec, PointDgpSpec};
use proximal_core::inference::{bootstrap, BootstrapConfig};
use proximal_core::longitudinal::{fit_recursive_ls, RecursiveConfig, StageMaps};
use proximal_core::point::{fit_ols_baseline, fit_p2sls, AdjustSet, PointOptions};
use proximal_core::Dataset;
use std::hint::black_box;

fn point(c: &mut Criterion) {
    let opts = PointOptions::default();
    let mut group = c.benchmark_group("point");
    for n in [1_000, 10_000, 100_000] {
        let (data, _) = generate_point(&PointDgpSpec::default(), n).unwrap();
        group.bench_with_input(BenchmarkId::new("ols", n), &data, |b, d| {
            b.iter(|| fit_ols_baseline(black_box(d), AdjustSet::X, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("p2sls", n), &data, |b, d| {
            b.iter(|| fit_p2sls(black_box(d), &opts).unwrap())
        });
    }
    group.finish();
}

fn recursive(c: &mut Criterion) {
    let config = RecursiveConfig {
        maps: StageMaps::full_with_interaction(),
        ..RecursiveConfig::default()
    };
    let mut group = c.benchmark_group("recursive_ls");
    for periods in [2, 3, 4] {
        let (data, _) = generate_longitudinal(&LongitudinalDgpSpec::confounded(periods), 10_000).unwrap();
        group.bench_with_input(BenchmarkId::new("J", periods), &data, |b, d| {
            b.iter(|| fit_recursive_ls(black_box(d), &config).unwrap())
        });
    }
    group.finish();
}

fn bootstrap_p2sls(c: &mut Criterion) {
    let (data, _) = generate_point(&PointDgpSpec::default(), 2_000).unwrap();
    let opts = PointOptions::default();
    let config = BootstrapConfig {
        replicates: 200,
        seed: 1,
        ..BootstrapConfig::default()
    };
    c.bench_function("bootstrap_p2sls_b200_n2000", |b| {
        b.iter(|| bootstrap(|d: &Dataset| Ok(fit_p2sls(d, &opts)?.parameters()), black_box(&data), &config).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = point, recursive, bootstrap_p2sls
}
criterion_main!(benches);
