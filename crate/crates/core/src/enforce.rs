//! End-to-end enforcement: text constraints in, constrained circuit and a
//! report out.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::circuit::{Circuit, CircuitError, Node, VarId};
use crate::logic::{
    bucketize, compile_bucket, feasibility_check, parse_constraints, BucketCaps, CompiledBucket, Feasibility,
    LinearConstraint, LogicError,
};
use crate::oracle::{self, OracleCaps, OracleError};
use crate::solver::{
    apply_solution, assemble_bucket_problem, solve_bucket, weighted_cross_entropy, BucketProblem, SolverError,
    SolverOptions, Status,
};
use crate::transform::{check_bucket_scoping, close_over_leaf_scopes, merge_bucket_leaves, MergedLeaf, TransformError};
use crate::world::WorldSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnforceError {
    #[error("invalid circuit: {0}")]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("constraints on {scope:?} (bucket {bucket}) are infeasible")]
    Infeasible { bucket: usize, scope: Vec<String> },
    #[error("bucket {bucket} ({scope:?}) violates co-scoping: {detail}")]
    ScopingViolation {
        bucket: usize,
        scope: Vec<String>,
        detail: String,
    },
    #[error("solver failed on bucket {bucket}: {detail}")]
    SolverFailure { bucket: usize, detail: String },
    #[error("constraint {constraint} violated by {residual:.3e} after enforcement")]
    VerificationFailed { constraint: usize, residual: f64 },
    #[error("circuits differ outside leaf tables")]
    StructureMismatch,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl EnforceError {
    pub fn code(&self) -> &'static str {
        match self {
            EnforceError::Circuit(_) => "INVALID_CIRCUIT",
            EnforceError::Logic(e) => match e {
                LogicError::Syntax { .. } => "SYNTAX_ERROR",
                LogicError::UnknownVariable { .. } => "UNKNOWN_VARIABLE",
                LogicError::NonBooleanVariable { .. } => "NON_BOOLEAN_VARIABLE",
                LogicError::ScopeMismatch { .. } => "SCOPE_MISMATCH",
                LogicError::BucketTooLarge { .. } => "BUCKET_TOO_LARGE",
                LogicError::Lp(_) => "SOLVER_FAILURE",
            },
            EnforceError::Infeasible { .. } => "INFEASIBLE",
            EnforceError::ScopingViolation { .. } => "SCOPING_VIOLATION",
            EnforceError::SolverFailure { .. } => "SOLVER_FAILURE",
            EnforceError::VerificationFailed { .. } => "VERIFICATION_FAILED",
            EnforceError::StructureMismatch => "STRUCTURE_MISMATCH",
            EnforceError::Oracle(_) => "TOO_LARGE_TO_ENUMERATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnforceOptions {
    pub tol: f64,
    /// Merge factorized bucket variables into joint leaves when needed.
    pub merge: bool,
    pub caps: BucketCaps,
    pub max_iter: usize,
    pub smoothing: f64,
}

impl Default for EnforceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            merge: true,
            caps: BucketCaps::default(),
            max_iter: 10_000,
            smoothing: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub scope: Vec<String>,
    pub constraints: Vec<usize>,
    pub leaves: usize,
    /// `sum_l w_l H(p_l, theta_l)`.
    pub objective: f64,
    /// `sum_l w_l H(p_l)`.
    pub baseline_entropy: f64,
    pub excess: f64,
    /// `A q - alpha` per row, from the output circuit.
    pub residuals: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub dual: Vec<f64>,
    pub merged: Vec<MergedLeaf>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnforcementReport {
    pub buckets: Vec<BucketReport>,
    pub total_objective: f64,
    pub total_baseline: f64,
    pub total_excess: f64,
    pub max_residual: f64,
    pub wall_time_secs: f64,
}

impl EnforcementReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Parses `text` against the circuit's variables and enforces it.
pub fn enforce(circuit: &Circuit, text: &str, opts: &EnforceOptions) -> Result<(Circuit, EnforcementReport), EnforceError> {
    circuit.ensure_valid()?;
    let constraints = parse_constraints(text, circuit.variables())?;
    enforce_constraints(circuit, &constraints, opts)
}

fn names(circuit: &Circuit, scope: &[VarId]) -> Vec<String> {
    scope.iter().map(|&v| circuit.variables()[v].name.clone()).collect()
}

/// Circuit marginal of every world of the bucket, by evaluation.
pub fn bucket_marginal(circuit: &Circuit, scope: &[VarId], space: &WorldSpace) -> Vec<f64> {
    let mut evidence = vec![None; circuit.num_variables()];
    let mut digits = vec![0; scope.len()];
    (0..space.size())
        .map(|w| {
            space.decode_into(w, &mut digits);
            for (&v, &d) in scope.iter().zip(&digits) {
                evidence[v] = Some(d);
            }
            circuit.evaluate_dense(&evidence)
        })
        .collect()
}

/// `A q - alpha` for one compiled bucket, `q` from evaluating `circuit`.
pub fn constraint_residuals(circuit: &Circuit, compiled: &CompiledBucket) -> Vec<f64> {
    let q = bucket_marginal(circuit, &compiled.bucket.scope, &compiled.space);
    compiled.residuals(&q)
}

pub fn enforce_constraints(
    circuit: &Circuit,
    constraints: &[LinearConstraint],
    opts: &EnforceOptions,
) -> Result<(Circuit, EnforcementReport), EnforceError> {
    let start = Instant::now();
    circuit.ensure_valid()?;
    let buckets = close_over_leaf_scopes(circuit, &bucketize(constraints));
    let compiled: Vec<CompiledBucket> = buckets
        .iter()
        .map(|b| compile_bucket(b, constraints, circuit.variables(), opts.caps))
        .collect::<Result<_, _>>()?;

    for (i, cb) in compiled.iter().enumerate() {
        if feasibility_check(cb, None, opts.tol.min(1e-9))? == Feasibility::Infeasible {
            return Err(EnforceError::Infeasible {
                bucket: i,
                scope: names(circuit, &cb.bucket.scope),
            });
        }
    }

    let mut work = circuit.clone();
    let mut merged: Vec<Vec<MergedLeaf>> = vec![Vec::new(); compiled.len()];
    let report = check_bucket_scoping(&work, &buckets);
    for (i, status) in report.buckets.iter().enumerate() {
        if status.satisfied || buckets[i].scope.is_empty() {
            continue;
        }
        let scope = names(circuit, &buckets[i].scope);
        if !opts.merge {
            return Err(EnforceError::ScopingViolation {
                bucket: i,
                scope,
                detail: format!("nodes {:?} cover part of the bucket; merging is disabled", status.violating),
            });
        }
        match merge_bucket_leaves(&work, &buckets[i]) {
            Ok(m) => {
                work = m.circuit;
                merged[i] = m.merged;
            }
            Err(TransformError::NotMergeable { reason, node, .. }) => {
                return Err(EnforceError::ScopingViolation {
                    bucket: i,
                    scope,
                    detail: format!("node {node}: {reason}; retrain with these variables kept together"),
                })
            }
            Err(e) => {
                return Err(EnforceError::ScopingViolation {
                    bucket: i,
                    scope,
                    detail: e.to_string(),
                })
            }
        }
    }
    // Leaf ids may have moved while merging later buckets; earlier
    // provenance is only reported for the final circuit.
    let problems: Vec<Option<BucketProblem>> = compiled
        .iter()
        .enumerate()
        .map(|(i, cb)| {
            if cb.bucket.scope.is_empty() {
                return Ok(None);
            }
            assemble_bucket_problem(&work, cb).map(Some).map_err(|e| match e {
                SolverError::ScopingViolation { reason, .. } => EnforceError::ScopingViolation {
                    bucket: i,
                    scope: names(circuit, &cb.bucket.scope),
                    detail: reason,
                },
                other => EnforceError::SolverFailure {
                    bucket: i,
                    detail: other.to_string(),
                },
            })
        })
        .collect::<Result<_, _>>()?;

    let solver_opts = SolverOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        smoothing: opts.smoothing,
        assume_feasible: true,
    };
    let solutions: Vec<_> = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| match p {
            None => Ok(None),
            Some(p) => match solve_bucket(p, &solver_opts) {
                Ok(s) if s.status == Status::Optimal => Ok(Some(s)),
                Ok(s) => Err(EnforceError::SolverFailure {
                    bucket: i,
                    detail: format!("status {:?}, KKT residual {:.3e}", s.status, s.kkt_residual),
                }),
                Err(SolverError::Infeasible) => Err(EnforceError::Infeasible {
                    bucket: i,
                    scope: names(circuit, &p.scope),
                }),
                Err(e) => Err(EnforceError::SolverFailure {
                    bucket: i,
                    detail: e.to_string(),
                }),
            },
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    for (p, s) in problems.iter().zip(&solutions) {
        if let (Some(p), Some(s)) = (p, s) {
            work = apply_solution(&work, p, s).map_err(|e| EnforceError::SolverFailure {
                bucket: 0,
                detail: e.to_string(),
            })?;
        }
    }
    work.ensure_valid()?;

    let mut reports = Vec::with_capacity(compiled.len());
    let mut max_residual: f64 = 0.0;
    for (i, cb) in compiled.iter().enumerate() {
        let residuals = if cb.bucket.scope.is_empty() {
            cb.residuals(&[1.0])
        } else {
            constraint_residuals(&work, cb)
        };
        for (&r, &c) in residuals.iter().zip(&cb.bucket.constraints) {
            if r > opts.tol + 1e-12 {
                return Err(EnforceError::VerificationFailed {
                    constraint: c,
                    residual: r,
                });
            }
            max_residual = max_residual.max(r);
        }
        let (objective, baseline, leaves, status, iterations, kkt, dual, notes) = match (&problems[i], &solutions[i]) {
            (Some(p), Some(s)) => (
                s.objective,
                weighted_cross_entropy(&p.w, &p.p, &p.p),
                p.leaf_ids.len(),
                s.status,
                s.iterations,
                s.kkt_residual,
                s.dual.clone(),
                s.notes.clone(),
            ),
            _ => (0.0, 0.0, 0, Status::Optimal, 0, 0.0, vec![0.0; residuals.len()], Vec::new()),
        };
        reports.push(BucketReport {
            scope: names(circuit, &cb.bucket.scope),
            constraints: cb.bucket.constraints.clone(),
            leaves,
            objective,
            baseline_entropy: baseline,
            excess: objective - baseline,
            residuals,
            status,
            iterations,
            kkt_residual: kkt,
            dual,
            merged: std::mem::take(&mut merged[i]),
            notes,
        });
    }
    let total_objective = reports.iter().map(|b| b.objective).sum();
    let total_baseline = reports.iter().map(|b| b.baseline_entropy).sum();
    let total_excess = reports.iter().map(|b| b.excess).sum();
    Ok((
        work,
        EnforcementReport {
            buckets: reports,
            total_objective,
            total_baseline,
            total_excess,
            max_residual,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1 {
    /// `H(p, q)` by joint enumeration.
    pub lhs: f64,
    /// `sum_B E_z[H(p_z(X_B), q_z(X_B))]`.
    pub bucket_term: f64,
    /// `H(p(X', Z))`.
    pub latent_term: f64,
    pub rhs: f64,
}

impl Theorem1 {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }
}

fn same_structure(p: &Circuit, q: &Circuit) -> bool {
    p.variables() == q.variables()
        && p.root() == q.root()
        && p.num_nodes() == q.num_nodes()
        && p.nodes().iter().zip(q.nodes()).all(|(a, b)| match (a, b) {
            (Node::Leaf { scope: s1, .. }, Node::Leaf { scope: s2, .. }) => s1 == s2,
            _ => a == b,
        })
}

/// Both sides of the cross-entropy bound for `q` obtained from `p` by
/// changing the tables of bucket leaves (leaves whose scope is exactly a
/// bucket scope).
pub fn theorem1_bound(
    p: &Circuit,
    q: &Circuit,
    bucket_scopes: &[Vec<VarId>],
    caps: OracleCaps,
) -> Result<Theorem1, EnforceError> {
    if !same_structure(p, q) {
        return Err(EnforceError::StructureMismatch);
    }
    let jp = oracle::enumerate_joint(p, caps.max_worlds)?;
    let jq = oracle::enumerate_joint(q, caps.max_worlds)?;
    let lhs = oracle::cross_entropy(&jp, &jq)?;
    let components = oracle::enumerate_mixture(p, caps.max_components)?;
    let mut bucket_term = 0.0;
    let mut latent_term = 0.0;
    for comp in components.iter().filter(|c| c.weight > 0.0) {
        latent_term -= comp.weight * comp.weight.ln();
        for &leaf in &comp.leaves {
            let scope = p.scope(leaf);
            let pt = p.leaf_table(leaf).expect("leaf");
            if bucket_scopes.iter().any(|b| b.as_slice() == scope) {
                let qt = q.leaf_table(leaf).expect("leaf");
                bucket_term += comp.weight * oracle::cross_entropy(pt, qt)?;
            } else {
                latent_term += comp.weight * oracle::entropy(pt);
            }
        }
    }
    Ok(Theorem1 {
        lhs,
        bucket_term,
        latent_term,
        rhs: bucket_term + latent_term,
    })
}
