use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pplpc::oracle::{reference_solve, ReferenceOptions};
use pplpc::solver::{solve_bucket, SolverOptions};
use pplpc_bench::bucket_problem;

fn by_size(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_bucket");
    for (vars, leaves) in [(3, 4), (6, 16), (8, 32), (10, 64)] {
        let prob = bucket_problem(vars, leaves, 4, 7);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{vars}v_{leaves}l")), &prob, |b, p| {
            b.iter(|| solve_bucket(black_box(p), &SolverOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn against_reference(c: &mut Criterion) {
    let prob = bucket_problem(3, 4, 3, 8);
    let mut g = c.benchmark_group("small_bucket");
    g.sample_size(10);
    g.bench_function("dual_newton", |b| b.iter(|| solve_bucket(black_box(&prob), &SolverOptions::default()).unwrap()));
    g.bench_function("reference", |b| {
        b.iter(|| reference_solve(black_box(&prob), &ReferenceOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, by_size, against_reference);
criterion_main!(benches);
