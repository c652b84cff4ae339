use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, NodeId, VarId};
use crate::logic::CompiledBucket;

use super::{Solution, SolverError};

/// Inputs of one bucket program. Tables and rows of `a` are indexed by
/// world over `scope` (lowest variable id is the fastest-changing digit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketProblem {
    pub scope: Vec<VarId>,
    pub leaf_ids: Vec<NodeId>,
    pub w: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

#[derive(Serialize)]
struct Dump<'a> {
    scope: &'a [VarId],
    leaf_ids: &'a [NodeId],
    w: &'a [f64],
    #[serde(rename = "P")]
    p: &'a [Vec<f64>],
    #[serde(rename = "A")]
    a: &'a [Vec<f64>],
    alpha: &'a [f64],
    world_order_note: &'static str,
}

impl BucketProblem {
    pub fn num_worlds(&self) -> usize {
        self.p
            .first()
            .or(self.a.first())
            .map_or(1, Vec::len)
    }

    pub fn check(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Malformed(m));
        let n = self.num_worlds();
        if self.w.len() != self.p.len() || self.leaf_ids.len() != self.w.len() {
            return bad("w, P and leaf_ids differ in length".into());
        }
        if self.w.is_empty() {
            return bad("no leaves".into());
        }
        if self.a.len() != self.alpha.len() {
            return bad("A and alpha differ in length".into());
        }
        if self.w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return bad("weights must be finite and non-negative".into());
        }
        let total: f64 = self.w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}"));
        }
        for (l, row) in self.p.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != n || row.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return bad(format!("leaf row {l} is not a distribution over {n} worlds"));
            }
        }
        for (c, row) in self.a.iter().enumerate() {
            if row.len() != n || row.iter().any(|x| !x.is_finite()) || !self.alpha[c].is_finite() {
                return bad(format!("constraint row {c} is malformed"));
            }
        }
        Ok(())
    }

    /// JSON dump for offline cross-checking.
    pub fn to_json_string(&self) -> String {
        let dump = Dump {
            scope: &self.scope,
            leaf_ids: &self.leaf_ids,
            w: &self.w,
            p: &self.p,
            a: &self.a,
            alpha: &self.alpha,
            world_order_note: "world index = sum_j value(scope[j]) * prod_{i<j} arity(scope[i]); scope[0] varies fastest",
        };
        serde_json::to_string_pretty(&dump).expect("problem serializes")
    }
}

/// Collects the leaves over exactly the bucket scope with their mixture
/// weights, plus the compiled constraint rows.
pub fn assemble_bucket_problem(circuit: &Circuit, compiled: &CompiledBucket) -> Result<BucketProblem, SolverError> {
    let scope = &compiled.bucket.scope;
    let violation = |reason: String| SolverError::ScopingViolation {
        scope: scope.clone(),
        reason,
    };
    for &id in circuit.order() {
        let s = circuit.scope(id);
        let common = s.iter().filter(|v| scope.binary_search(v).is_ok()).count();
        if common > 0 && common < scope.len() {
            return Err(violation(format!("node {id} covers only part of the bucket")));
        }
        if circuit.node(id).is_leaf() && common == scope.len() && s.len() > scope.len() {
            return Err(violation(format!("leaf {id} covers the bucket plus other variables")));
        }
    }
    let weights = circuit
        .leaf_weights(scope)
        .map_err(|e| violation(e.to_string()))?;
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(violation(format!("bucket leaf weights sum to {total}")));
    }
    let leaf_ids: Vec<NodeId> = weights.keys().copied().collect();
    let w: Vec<f64> = weights.values().copied().collect();
    let p = leaf_ids
        .iter()
        .map(|&l| circuit.leaf_table(l).expect("leaf").to_vec())
        .collect();
    Ok(BucketProblem {
        scope: scope.clone(),
        leaf_ids,
        w,
        p,
        a: compiled.rows.clone(),
        alpha: compiled.bounds.clone(),
    })
}

/// Writes each bucket leaf's new table; nothing else changes.
pub fn apply_solution(circuit: &Circuit, problem: &BucketProblem, solution: &Solution) -> Result<Circuit, SolverError> {
    let mut out = circuit.clone();
    for (&leaf, theta) in problem.leaf_ids.iter().zip(&solution.theta) {
        out.set_leaf_table(leaf, theta.clone())
            .map_err(|e| SolverError::Malformed(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::CircuitBuilder;
    use crate::logic::{bucketize, compile_bucket, parse_constraints, BucketCaps};
    use crate::solver::{solve_bucket, SolverOptions};

    fn compiled(c: &Circuit, text: &str) -> CompiledBucket {
        let cs = parse_constraints(text, c.variables()).unwrap();
        let b = bucketize(&cs);
        compile_bucket(&b[0], &cs, c.variables(), BucketCaps::default()).unwrap()
    }

    #[test]
    fn single_joint_leaf() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l = b.leaf(vec![0, 1], vec![0.1, 0.2, 0.3, 0.4]);
        let c = b.build(l).unwrap();
        let pr = assemble_bucket_problem(&c, &compiled(&c, "P(x0 | x1) <= 0.5")).unwrap();
        assert_eq!(pr.w, vec![1.0]);
        assert_eq!(pr.p, vec![vec![0.1, 0.2, 0.3, 0.4]]);
        assert_eq!(pr.a, vec![vec![0.0, 1.0, 1.0, 1.0]]);
    }

    #[test]
    fn sum_weights_become_leaf_weights() {
        let mut b = CircuitBuilder::with_binary_variables(1);
        let l0 = b.bernoulli(0, 0.2);
        let l1 = b.bernoulli(0, 0.9);
        let root = b.sum(vec![l0, l1], vec![0.3, 0.7]);
        let c = b.build(root).unwrap();
        let pr = assemble_bucket_problem(&c, &compiled(&c, "P(x0) <= 0.5")).unwrap();
        assert_eq!(pr.w, vec![0.3, 0.7]);
    }

    #[test]
    fn factorized_bucket_is_a_scoping_violation() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l0 = b.bernoulli(0, 0.2);
        let l1 = b.bernoulli(1, 0.9);
        let root = b.product(vec![l0, l1]);
        let c = b.build(root).unwrap();
        assert!(matches!(
            assemble_bucket_problem(&c, &compiled(&c, "P(x0 & x1) <= 0.5")),
            Err(SolverError::ScopingViolation { .. })
        ));
    }

    #[test]
    fn identity_solution_leaves_the_circuit_unchanged() {
        let mut b = CircuitBuilder::with_binary_variables(2);
        let l0 = b.bernoulli(0, 0.2);
        let l1 = b.bernoulli(1, 0.9);
        let root = b.product(vec![l0, l1]);
        let c = b.build(root).unwrap();
        let pr = assemble_bucket_problem(&c, &compiled(&c, "P(x0) <= 0.5")).unwrap();
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(apply_solution(&c, &pr, &s).unwrap(), c);
    }

    #[test]
    fn dump_names_its_fields() {
        let pr = BucketProblem {
            scope: vec![0],
            leaf_ids: vec![NodeId(0)],
            w: vec![1.0],
            p: vec![vec![0.5, 0.5]],
            a: vec![vec![0.0, 1.0]],
            alpha: vec![0.2],
        };
        let v: serde_json::Value = serde_json::from_str(&pr.to_json_string()).unwrap();
        for key in ["w", "P", "A", "alpha", "world_order_note"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
