use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::hint::black_box;
use tsolve_bench::load;
use tsolve_core::contour::ContourRule;
use tsolve_core::fem::{exp_factor, solve_resolvent, Mesh1D};

fn resolvent(c: &mut Criterion) {
    let mut g = c.benchmark_group("resolvent_solve");
    for n in [127, 1023, 8191] {
        let mesh = Mesh1D::new(n, 1.0).unwrap();
        let w = load(n);
        let z = Complex64::new(-3.0, 40.0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_resolvent(black_box(z), &w, &mesh, 1.0).unwrap())
        });
    }
    g.finish();
}

fn exponential(c: &mut Criterion) {
    let n = 511;
    let mesh = Mesh1D::new(n, 1.0).unwrap();
    let w = load(n);
    let rule = ContourRule::new(0.05, 0.15, PI / 12.0, 1.0).unwrap();
    c.bench_function("exp_factor_511", |b| {
        b.iter(|| exp_factor(black_box(&w), 1.0, &rule, &mesh).unwrap())
    });
}

criterion_group!(benches, resolvent, exponential);
criterion_main!(benches);
