// Cross-module properties checked against brute-force oracles.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng as _;

use pplpc::circuit::{Circuit, NodeId, Variable};
use pplpc::logic::{compile_bucket, feasibility_check, parse_statements, Bucket, BucketCaps, LinearConstraint};
use pplpc::oracle::{enumerate_mixture, grid_feasible};
use pplpc::rng::rng_from_seed;
use pplpc::solver::{solve_bucket, BucketProblem, SolverOptions};
use pplpc::synthetic::{normalize_all, random_circuit, random_distribution, random_feasible_statements, statements_text, CircuitShape};

fn shape(n: usize, depth: usize) -> CircuitShape {
    CircuitShape {
        depth,
        ..CircuitShape::binary(n)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    // flow-based leaf weights equal the total weight of induced trees through the leaf
    #[test]
    fn leaf_weights_match_induced_trees(seed in any::<u64>(), n in 2usize..7, depth in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let c = random_circuit(&mut rng, &shape(n, depth));
        let comps = enumerate_mixture(&c, 1 << 14).unwrap();
        let total: f64 = comps.iter().map(|k| k.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let mut by_leaf: BTreeMap<NodeId, f64> = BTreeMap::new();
        for k in &comps {
            for &l in &k.leaves {
                *by_leaf.entry(l).or_default() += k.weight;
            }
        }
        for v in 0..n {
            let w = c.leaf_weights(&[v]).unwrap();
            for (id, x) in w {
                prop_assert!((x - by_leaf.get(&id).copied().unwrap_or(0.0)).abs() < 1e-12);
            }
        }
    }

    // text written by the printer parses back to the same rows
    #[test]
    fn statements_round_trip_through_text(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let scope: Vec<usize> = (0..k).collect();
        let st = random_feasible_statements(&mut rng, &scope, 3);
        let vars: Vec<Variable> = (0..k).map(|i| Variable::binary(i, format!("x{i}"))).collect();
        let back = parse_statements(&statements_text(&st, &vars), &vars).unwrap();
        let (a, b) = (normalize_all(&st), normalize_all(&back));
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.terms, &y.terms);
            // printed bounds carry 12 significant digits
            prop_assert!((x.bound - y.bound).abs() <= 1e-11 * x.bound.abs().max(1.0));
        }
    }
}

fn compiled(constraints: &[LinearConstraint], k: usize) -> pplpc::logic::CompiledBucket {
    let vars: Vec<Variable> = (0..k).map(|i| Variable::binary(i, format!("x{i}"))).collect();
    let bucket = Bucket {
        constraints: (0..constraints.len()).collect(),
        scope: (0..k).collect(),
    };
    compile_bucket(&bucket, constraints, &vars, BucketCaps::default()).unwrap()
}

// LP feasibility agrees with a grid search over the simplex: whenever the
// grid finds a point the LP must say feasible, and an LP witness must
// satisfy the rows.
#[test]
fn lp_feasibility_agrees_with_grid_search() {
    let mut rng = rng_from_seed(11);
    let (mut agree_feasible, mut infeasible) = (0, 0);
    for case in 0..300 {
        let k = rng.random_range(1..=2);
        let worlds = 1 << k;
        let rows = rng.random_range(1..=4);
        // random rows over single literals and their conjunction
        let text: String = (0..rows)
            .map(|_| {
                let f = match (k, rng.random_range(0..4)) {
                    (1, 0 | 1) => "x0".to_string(),
                    (1, _) => "~x0".to_string(),
                    (_, 0) => "x0".into(),
                    (_, 1) => "x1 & ~x0".into(),
                    (_, 2) => "x0 | x1".into(),
                    _ => "~x1".into(),
                };
                let op = ["<=", ">=", "="][rng.random_range(0..3)];
                format!("P({f}) {op} {:.2}\n", rng.random_range(0.0..1.0))
            })
            .collect();
        let vars: Vec<Variable> = (0..k).map(|i| Variable::binary(i, format!("x{i}"))).collect();
        let cons = normalize_all(&parse_statements(&text, &vars).unwrap());
        let cb = compiled(&cons, k);
        let lp = feasibility_check(&cb, None, 1e-9).unwrap();
        let grid = grid_feasible(&cb.rows, &cb.bounds, worlds, 100, 1e-12);
        match (&lp, &grid) {
            (pplpc::logic::Feasibility::Feasible(m), _) => {
                assert!(cb.max_violation(m) <= 1e-9, "case {case}: witness violates rows\n{text}");
                assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9 && m.iter().all(|&x| x >= -1e-12));
                if grid.is_some() {
                    agree_feasible += 1;
                }
            }
            (pplpc::logic::Feasibility::Infeasible, None) => infeasible += 1,
            (pplpc::logic::Feasibility::Infeasible, Some(g)) => panic!("case {case}: grid point {g:?} but LP infeasible\n{text}"),
        }
    }
    assert!(agree_feasible > 30 && infeasible > 30, "{agree_feasible} {infeasible}");
}

fn problem(seed: u64) -> BucketProblem {
    let mut rng = rng_from_seed(seed);
    let worlds = 8;
    let leaves = 4;
    let r = random_distribution(&mut rng, worlds, 1.0);
    let a: Vec<Vec<f64>> = (0..3).map(|_| (0..worlds).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let alpha = a.iter().map(|row| row.iter().zip(&r).map(|(x, y)| x * y).sum()).collect();
    BucketProblem {
        scope: vec![0, 1, 2],
        leaf_ids: (0..leaves).map(NodeId).collect(),
        w: random_distribution(&mut rng, leaves, 1.0),
        p: (0..leaves).map(|_| random_distribution(&mut rng, worlds, 1.0)).collect(),
        a,
        alpha,
    }
}

// Reordering leaves or rows permutes the solution the same way.
#[test]
fn solver_is_permutation_equivariant() {
    for seed in 0..20 {
        let base = problem(seed);
        let sol = solve_bucket(&base, &SolverOptions::default()).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut p2 = base.clone();
        p2.w = perm.iter().map(|&i| base.w[i]).collect();
        p2.p = perm.iter().map(|&i| base.p[i].clone()).collect();
        p2.leaf_ids = perm.iter().map(|&i| base.leaf_ids[i]).collect();
        p2.a.reverse();
        p2.alpha.reverse();
        let sol2 = solve_bucket(&p2, &SolverOptions::default()).unwrap();
        assert!((sol.objective - sol2.objective).abs() < 1e-9);
        for (j, &i) in perm.iter().enumerate() {
            for (x, y) in sol.theta[i].iter().zip(&sol2.theta[j]) {
                assert!((x - y).abs() < 1e-7, "seed {seed}");
            }
        }
    }
}

// Relabeling worlds (swapping two bucket variables) commutes with solving.
#[test]
fn solver_commutes_with_world_relabeling() {
    // swap bits 0 and 1 of a 3-bit world index
    let swap = |w: usize| (w & 4) | ((w & 1) << 1) | ((w & 2) >> 1);
    for seed in 20..40 {
        let base = problem(seed);
        let sol = solve_bucket(&base, &SolverOptions::default()).unwrap();
        let relabel = |v: &Vec<f64>| (0..8).map(|w| v[swap(w)]).collect::<Vec<f64>>();
        let mut p2 = base.clone();
        p2.p = base.p.iter().map(relabel).collect();
        p2.a = base.a.iter().map(relabel).collect();
        let sol2 = solve_bucket(&p2, &SolverOptions::default()).unwrap();
        for (t1, t2) in sol.theta.iter().zip(&sol2.theta) {
            for w in 0..8 {
                assert!((t1[swap(w)] - t2[w]).abs() < 1e-7, "seed {seed}");
            }
        }
    }
}

#[test]
fn random_circuits_are_valid_and_normalized() {
    let mut rng = rng_from_seed(5);
    for _ in 0..50 {
        let n = rng.random_range(2..9);
        let c: Circuit = random_circuit(&mut rng, &shape(n, 3));
        assert!(c.validate().is_valid());
        let total: f64 = (0..1usize << n)
            .map(|w| c.evaluate_dense(&(0..n).map(|v| Some((w >> v) & 1)).collect::<Vec<_>>()))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
