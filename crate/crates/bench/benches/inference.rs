use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use pplpc::eval::avg_log_likelihood;
use pplpc::rng::rng_from_seed;
use pplpc::synthetic::{ground_truth_circuit, random_circuit, sample_dataset, CircuitShape};
use pplpc::{enforce, EnforceOptions};

fn evaluation(c: &mut Criterion) {
    let truth = ground_truth_circuit();
    let data = sample_dataset(&truth, 1000, 1);
    let row: Vec<Option<usize>> = data.row(0);
    let wide = random_circuit(&mut rng_from_seed(2), &CircuitShape {
        depth: 5,
        ..CircuitShape::binary(40)
    });
    let wide_row: Vec<Option<usize>> = (0..40).map(|v| if v % 3 == 0 { None } else { Some(v % 2) }).collect();

    c.bench_function("evaluate_ground_truth", |b| b.iter(|| truth.evaluate_dense(black_box(&row))));
    c.bench_function("evaluate_wide_partial", |b| b.iter(|| wide.evaluate_dense(black_box(&wide_row))));
    c.bench_function("flows_wide", |b| b.iter(|| black_box(&wide).flows()));
    c.bench_function("avg_log_likelihood_1000", |b| {
        b.iter(|| avg_log_likelihood(black_box(&truth), &data).unwrap())
    });
}

fn enforcement(c: &mut Criterion) {
    let truth = ground_truth_circuit();
    // single-variable buckets: this circuit does not keep pairs together
    let text = "P(x0) = 0.3\nP(x3) >= 0.6\nP(~x5) <= 0.4\n";
    c.bench_function("enforce_three_buckets", |b| {
        b.iter(|| enforce(black_box(&truth), text, &EnforceOptions::default()).unwrap())
    });
}

criterion_group!(benches, evaluation, enforcement);
criterion_main!(benches);
