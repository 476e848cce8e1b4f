//! Compares the data-parallel map against its sequential equivalent on the
//! workloads that fan out through it: minimal-branch row batches and the
//! verification battery. The sequential case runs the exact closure the
//! non-`parallel` build would run, so the pair quantifies what the default
//! feature buys on this machine.

use criterion::{criterion_group, criterion_main, Criterion};
use pxlap::branches::{verify_suite, VerifyOptions};
use pxlap::mesh::{build_grid, DomainSpec, Grid};
use pxlap::par;
use pxlap::solvers::{
    build_supersolution_small_lambda, monotone_iteration, IterationStatus, SolverParams,
};
use std::sync::Arc;

fn desk_grid(n: usize) -> Arc<Grid> {
    let spec = DomainSpec::interval((0.0, 1.0), (0.4, 0.6), 3.0, 1.5).expect("valid domain");
    build_grid(&spec, n).expect("valid grid")
}

fn bench_row_batch(c: &mut Criterion) {
    let grid = desk_grid(101);
    let params = SolverParams::default();
    let upper = build_supersolution_small_lambda(&grid, &params).expect("barrier builds");
    let count = 16;
    let lambdas: Vec<f64> =
        (1..=count).map(|k| upper.lambda_tilde * k as f64 / (count + 1) as f64).collect();
    let solve = |lambda: f64| {
        let out = monotone_iteration(&grid, lambda, None, &params).expect("row solves");
        assert_eq!(out.status, IterationStatus::Converged);
        out.iterations
    };

    let mut group = c.benchmark_group("minimal-branch-rows");
    group.sample_size(20);
    group.bench_function("parallel-map", |b| b.iter(|| par::map_collect(lambdas.clone(), solve)));
    group.bench_function("sequential-map", |b| {
        b.iter(|| lambdas.clone().into_iter().map(solve).collect::<Vec<_>>())
    });
    group.finish();
}

fn bench_verify_battery(c: &mut Criterion) {
    let grid = desk_grid(101);
    let params = SolverParams::default();
    let opts = VerifyOptions::default();
    let mut group = c.benchmark_group("verify-battery");
    group.sample_size(10);
    group.bench_function("fifteen-checks", |b| {
        b.iter(|| {
            let report = verify_suite(&grid, &opts, &params).expect("battery runs");
            assert!(report.all_passed);
        })
    });
    group.finish();
}

criterion_group!(benches, bench_row_batch, bench_verify_battery);
criterion_main!(benches);
