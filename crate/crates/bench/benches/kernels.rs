use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meanfield_bench::{cloud, regression_problem, solver_setup};
use meanfield_core::fbsde::regress_conditional;
use meanfield_core::meanfield::{solve_mfg, SolverParams};
use meanfield_core::measure::wasserstein2;

fn w2(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein2");
    for (dim, n) in [(1, 1000), (2, 64), (2, 256)] {
        let (a, b) = (cloud(n, dim, 0.0, 1), cloud(n, dim, 0.5, 2));
        group.bench_with_input(BenchmarkId::new(format!("dim{dim}"), n), &n, |bench, _| {
            bench.iter(|| wasserstein2(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn regression(c: &mut Criterion) {
    let mut group = c.benchmark_group("regression");
    for rows in [1000, 5000] {
        let (features, targets) = regression_problem(rows, 3);
        for degree in [2, 3] {
            group.bench_function(BenchmarkId::new(format!("degree{degree}"), rows), |bench| {
                bench.iter(|| {
                    regress_conditional(black_box(&targets), black_box(&features), degree).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_mfg");
    group.sample_size(10);
    for model in ["lq_basic", "lq_mean_coupled"] {
        let (entry, grid, paths) = solver_setup(model, 200, 10);
        group.bench_function(model, |bench| {
            bench.iter(|| solve_mfg(&entry.spec, &grid, &paths, &SolverParams::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, w2, regression, solve);
criterion_main!(benches);
