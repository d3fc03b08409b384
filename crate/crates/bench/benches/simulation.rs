use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use varbound::model::sample_mixing_paths;
use varbound::{
    build_grid, estimate_payoff, simulate_double_localvol, simulate_localvol, DoubleLocalSurface,
    LocalVolSurface, MixtureSpec, Payoff, RngConfig, SimOptions,
};

const PATHS: usize = 2_000;

fn euler(c: &mut Criterion) {
    let spec = MixtureSpec::toy3();
    let lv = LocalVolSurface::new(spec.clone());
    let dl = DoubleLocalSurface::new(spec.clone(), 1e-5).unwrap();
    let mut group = c.benchmark_group("euler");
    group.sample_size(10);
    group.throughput(Throughput::Elements(PATHS as u64));
    for steps in [50, 200] {
        let grid = build_grid(&spec, steps).unwrap();
        let opts = SimOptions::workers(1);
        group.bench_with_input(BenchmarkId::new("localvol", steps), &grid, |b, g| {
            b.iter(|| simulate_localvol(&lv, g, RngConfig::new(1), PATHS, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dlocalvol", steps), &grid, |b, g| {
            b.iter(|| simulate_double_localvol(&dl, g, RngConfig::new(1), PATHS, &opts).unwrap())
        });
    }
    group.finish();
}

fn exact(c: &mut Criterion) {
    let spec = MixtureSpec::toy3();
    let grid = build_grid(&spec, 2).unwrap();
    c.bench_function("mixing/exact_paths", |b| {
        b.iter(|| sample_mixing_paths(&spec, &grid, RngConfig::new(1), PATHS, 1).unwrap())
    });
}

fn payoff(c: &mut Criterion) {
    let v: Vec<f64> = (0..100_000)
        .map(|i| 5.5 + (i % 1000) as f64 * 1e-3)
        .collect();
    let call = Payoff::variance_call(6.0).unwrap();
    c.bench_function("estimate_payoff/varcall_1e5", |b| {
        b.iter(|| estimate_payoff(&v, &call).unwrap())
    });
}

criterion_group!(benches, euler, exact, payoff);
criterion_main!(benches);
