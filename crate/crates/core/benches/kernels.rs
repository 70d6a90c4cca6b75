//! Data-parallel kernels vs the sequential fallback on the hot paths:
//! pointwise reductions, spectral derivative sweeps, wedge products, and a
//! full residual assembly.
//!
//! With `--no-default-features` the default path is itself sequential; with
//! the (default) `parallel` feature this compares rayon against the
//! explicit sequential reference.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fuyau_core::exec;
use fuyau_core::field::{integrate, wedge};
use fuyau_core::geometry::{flat_metric, make_problem, NormKind};
use fuyau_core::grid::GridSpec;
use fuyau_core::probes::{band_limited_form, band_limited_scalar};
use fuyau_core::residual::residual_divergence;
use fuyau_core::spectral::{differentiate, Deriv};
use std::hint::black_box;
use std::sync::Arc;

fn bench_reductions(c: &mut Criterion) {
    let grid = GridSpec::new(2, 24).unwrap();
    let u = band_limited_scalar(grid, 3, 2, 1.0);
    let mut g = c.benchmark_group("reduce_sum");
    g.bench_with_input(BenchmarkId::new("default", grid.num_points()), &u, |b, u| {
        b.iter(|| black_box(exec::sum_indexed(u.data.len(), |i| u.data[i])));
    });
    g.bench_with_input(BenchmarkId::new("seq", grid.num_points()), &u, |b, u| {
        b.iter(|| black_box(exec::seq::sum_indexed(u.data.len(), |i| u.data[i])));
    });
    g.finish();
}

fn bench_derivative(c: &mut Criterion) {
    let grid = GridSpec::new(2, 24).unwrap();
    let u = band_limited_form(grid, 0, 1, 5, 2, 1.0);
    let mut g = c.benchmark_group("spectral_derivative");
    g.sample_size(20);
    g.bench_function("dbar_01_form", |b| {
        b.iter(|| black_box(differentiate(&u, Deriv::Dbar).unwrap()));
    });
    g.finish();
}

fn bench_wedge(c: &mut Criterion) {
    let grid = GridSpec::new(2, 24).unwrap();
    let a = band_limited_form(grid, 1, 1, 7, 1, 1.0);
    let b2 = band_limited_form(grid, 1, 1, 8, 1, 1.0);
    let mut g = c.benchmark_group("wedge_11_11");
    g.sample_size(20);
    g.bench_function("default", |b| {
        b.iter(|| black_box(wedge(&a, &b2).unwrap()));
    });
    g.finish();
}

fn bench_residual(c: &mut Criterion) {
    let grid = GridSpec::new(2, 16).unwrap();
    let s = Arc::new(flat_metric(grid));
    let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s.clone()).unwrap();
    let mut phi = band_limited_scalar(grid, 11, 2, 0.1);
    phi.shift(3.0);
    // warm the contraction cache outside the timer
    let _ = residual_divergence(&phi, &data, 1.0);
    let mut g = c.benchmark_group("residual_divergence");
    g.sample_size(20);
    g.bench_function("n2_N16", |b| {
        b.iter(|| black_box(residual_divergence(&phi, &data, 1.0)));
    });
    g.bench_function("integrate_n2_N16", |b| {
        b.iter(|| black_box(integrate(&phi, s.as_ref())));
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_reductions,
    bench_derivative,
    bench_wedge,
    bench_residual
);
criterion_main!(benches);
