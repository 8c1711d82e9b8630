//! Single-thread versus default thread pool on the data-parallel hot paths.
//! Build with `--no-default-features` to measure the sequential fallback; both
//! variants then run the same code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use afcfit::density::{accumulate, DensityConfig};
use afcfit::metrics::{full_report, simulate_judgements};
use afcfit::synthetic::{generate, SyntheticSpec, Truth};
use afcfit::JudgementDataset;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("default", all)]
}

fn dataset(t: usize, m: u32) -> JudgementDataset {
    generate(&SyntheticSpec::new(Truth::Logistic { k: 8.0 }, t, m, 7)).unwrap().0
}

fn bench_accumulate(c: &mut Criterion) {
    let ds = dataset(150_000, 2);
    let mut group = c.benchmark_group("accumulate");
    group.sample_size(20);
    for g in [20, 100] {
        let cfg = DensityConfig::new(1.0 / 44.0, g);
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, g), &cfg, |b, cfg| {
                b.iter(|| pool.install(|| accumulate(&ds, cfg).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_report(c: &mut Criterion) {
    let train = dataset(100_000, 2);
    let test = dataset(100_000, 5);
    let surface = afcfit::fit_surface(&train, &DensityConfig::default()).unwrap();
    let mut group = c.benchmark_group("full_report");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(name, |b| b.iter(|| pool.install(|| full_report(&test, &surface, 1))));
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let test = dataset(100_000, 5);
    let truth = Truth::Logistic { k: 8.0 };
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("judgements", name), |b| {
            b.iter(|| pool.install(|| simulate_judgements(&test, &truth, 3)))
        });
        group.bench_function(BenchmarkId::new("generate", name), |b| {
            b.iter(|| pool.install(|| dataset(100_000, 5)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_accumulate, bench_report, bench_simulate);
criterion_main!(benches);
