//! Fixtures shared by the benchmarks.

use pplpc::circuit::NodeId;
use pplpc::rng::rng_from_seed;
use pplpc::solver::BucketProblem;
use pplpc::synthetic::random_distribution;

/// Feasible bucket program over `vars` binary variables: `leaves` random
/// tables and `rows` random rows tight at a random distribution.
pub fn bucket_problem(vars: usize, leaves: usize, rows: usize, seed: u64) -> BucketProblem {
    let mut rng = rng_from_seed(seed);
    let worlds = 1 << vars;
    let r = random_distribution(&mut rng, worlds, 1.0);
    let a: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            random_distribution(&mut rng, worlds, 1.0)
                .into_iter()
                .map(|x| x * worlds as f64 - 1.0)
                .collect()
        })
        .collect();
    let alpha = a.iter().map(|row| row.iter().zip(&r).map(|(x, y)| x * y).sum()).collect();
    BucketProblem {
        scope: (0..vars).collect(),
        leaf_ids: (0..leaves).map(NodeId).collect(),
        w: random_distribution(&mut rng, leaves, 1.0),
        p: (0..leaves).map(|_| random_distribution(&mut rng, worlds, 1.0)).collect(),
        a,
        alpha,
    }
}
