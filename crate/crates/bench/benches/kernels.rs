use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pmv_bench::{basis, field, initial_state, stabilization, stefan_system};
use pmv_core::sde::{Dynamics, PathStepper};
use pmv_core::{certify, Nonlinearity};
use std::hint::black_box;

fn transforms(c: &mut Criterion) {
    let mut g = c.benchmark_group("transforms");
    for n in [16, 64, 256] {
        let b = basis(n);
        let x = field(n);
        let mut grid = vec![0.0; b.n_grid()];
        let mut back = vec![0.0; n];
        g.bench_with_input(BenchmarkId::new("synthesize", n), &n, |bch, _| bch.iter(|| b.synthesize(black_box(&x), &mut grid)));
        b.synthesize(&x, &mut grid);
        g.bench_with_input(BenchmarkId::new("analyze", n), &n, |bch, _| bch.iter(|| b.analyze(black_box(&grid), &mut back)));
    }
    g.finish();
}

fn delta_beta(c: &mut Criterion) {
    let mut g = c.benchmark_group("delta_beta");
    let beta = Nonlinearity::stefan_eps(0.5, 1.0).unwrap();
    for n in [16, 64, 256] {
        let b = basis(n);
        let x = field(n);
        let mut grid = vec![0.0; b.n_grid()];
        let mut out = vec![0.0; n];
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| beta.delta_beta_into(&b, black_box(&x), &mut grid, &mut out))
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("euler_step");
    for n in [16, 64] {
        let sys = stefan_system(n);
        let init = initial_state(&sys);
        let h = sys.h_max() / 4.0;
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            let mut s = PathStepper::new(&sys, Dynamics::True, h, 1, 0, 0, &init, None);
            bch.iter(|| s.step(0).unwrap())
        });
    }
    g.finish();
}

fn certificate(c: &mut Criterion) {
    let cfg = stabilization(16);
    c.bench_function("certify_16_modes_64_samples", |b| b.iter(|| certify(black_box(&cfg), 64, 5).unwrap()));
}

criterion_group!(benches, transforms, delta_beta, step, certificate);
criterion_main!(benches);
