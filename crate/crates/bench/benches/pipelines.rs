//! Criterion benchmarks for the main solver pipelines at desk scale.

use criterion::{criterion_group, criterion_main, Criterion};
use dirlat_core::atspp::{round_path, solve_atspp_lp, solve_zmin_dual, ExactCircuitSolver};
use dirlat_core::metric::{generate_random, metric_closure, Metric};
use dirlat_core::oracle::exact_dirlat;
use dirlat_core::rat::{frac, Rat};
use dirlat_core::regret::round_regret;
use std::hint::black_box;

fn int_metric(n: usize, max: i64, seed: u64, symmetric: bool) -> Metric {
    let m = generate_random(n, max, seed, symmetric);
    let raw: Vec<Vec<Rat>> = m
        .dist
        .iter()
        .map(|row| row.iter().map(|d| Rat::from(d.ceil().to_integer())).collect())
        .collect();
    Metric::new(metric_closure(&raw).unwrap(), 0, symmetric).unwrap()
}

fn bench_atspp_lp(c: &mut Criterion) {
    let m = int_metric(6, 5, 1, false);
    let rho = frac(2, 3);
    c.bench_function("atspp_lp_n6", |b| {
        b.iter(|| black_box(solve_atspp_lp(&m, 0, 5, &rho)))
    });
}

fn bench_round_path(c: &mut Criterion) {
    let m = int_metric(6, 5, 2, false);
    let rho = frac(2, 3);
    let state = solve_atspp_lp(&m, 0, 5, &rho);
    let dual = solve_zmin_dual(&state);
    c.bench_function("round_path_n6", |b| {
        b.iter(|| black_box(round_path(&state, &dual, &ExactCircuitSolver::default())))
    });
}

fn bench_regret_pipeline(c: &mut Criterion) {
    let m = int_metric(6, 4, 3, true).with_endpoints(0, 5);
    let rho = frac(2, 3);
    c.bench_function("round_regret_n6", |b| {
        b.iter(|| black_box(round_regret(&m, &rho, None)))
    });
}

fn bench_exact_oracle(c: &mut Criterion) {
    let m = int_metric(8, 6, 4, false);
    c.bench_function("exact_dirlat_n8", |b| {
        b.iter(|| black_box(exact_dirlat(&m, 14).unwrap()))
    });
}

criterion_group! {
    name = pipelines;
    config = Criterion::default().sample_size(10);
    targets = bench_atspp_lp, bench_round_path, bench_regret_pipeline, bench_exact_oracle
}
criterion_main!(pipelines);
