use std::collections::BTreeMap;

use serde::Serialize;

use crate::circuit::{VarId, Variable};
use crate::lp::{self, LpOptions, Row};
use crate::world::WorldSpace;

use super::{Formula, LinearConstraint, LogicError};

/// Constraints that share variables, directly or transitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bucket {
    /// Indices into the constraint list, ascending.
    pub constraints: Vec<usize>,
    /// Sorted union of the variables of those constraints.
    pub scope: Vec<VarId>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Partitions constraints into variable-disjoint buckets ordered by their
/// smallest variable. Constraints without variables are grouped by source
/// statement and placed last.
pub fn bucketize(constraints: &[LinearConstraint]) -> Vec<Bucket> {
    let var_sets: Vec<Vec<VarId>> = constraints.iter().map(|c| c.vars().into_iter().collect()).collect();
    let max_var = var_sets.iter().flatten().copied().max().map_or(0, |m| m + 1);
    let mut uf = UnionFind((0..max_var).collect());
    for vs in &var_sets {
        for w in vs.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut by_root: BTreeMap<usize, Bucket> = BTreeMap::new();
    let mut constant: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, vs) in var_sets.iter().enumerate() {
        match vs.first() {
            Some(&v) => {
                let root = uf.find(v);
                let b = by_root.entry(root).or_insert_with(|| Bucket {
                    constraints: Vec::new(),
                    scope: Vec::new(),
                });
                b.constraints.push(i);
                b.scope.extend(vs);
            }
            None => constant.entry(constraints[i].source).or_default().push(i),
        }
    }
    // Roots are the minimum element of their class, so map order is
    // smallest-variable order.
    let mut out: Vec<Bucket> = by_root
        .into_values()
        .map(|mut b| {
            b.scope.sort_unstable();
            b.scope.dedup();
            b
        })
        .collect();
    let mut constant: Vec<Vec<usize>> = constant.into_values().collect();
    constant.sort_by_key(|c| c[0]);
    out.extend(constant.into_iter().map(|constraints| Bucket {
        constraints,
        scope: Vec::new(),
    }));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldIndicator {
    pub scope: Vec<VarId>,
    pub bits: Vec<bool>,
}

impl WorldIndicator {
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Truth of `formula` in each world of `scope` (arities aligned with scope).
pub fn compile_indicator(formula: &Formula, scope: &[VarId], arities: &[usize]) -> Result<WorldIndicator, LogicError> {
    if let Some(&var) = formula.vars().iter().find(|v| scope.binary_search(v).is_err()) {
        return Err(LogicError::ScopeMismatch { var });
    }
    let space = WorldSpace::new(arities).ok_or(LogicError::BucketTooLarge {
        vars: scope.len(),
        worlds: arities.iter().map(|&a| a as u128).product(),
        max_vars: usize::MAX,
        max_worlds: usize::MAX,
    })?;
    let mut digits = vec![0; scope.len()];
    let bits = (0..space.size())
        .map(|w| {
            space.decode_into(w, &mut digits);
            formula.eval(&|v| digits[scope.binary_search(&v).expect("checked above")])
        })
        .collect();
    Ok(WorldIndicator {
        scope: scope.to_vec(),
        bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BucketCaps {
    pub max_vars: usize,
    pub max_worlds: usize,
}

impl Default for BucketCaps {
    fn default() -> Self {
        Self {
            max_vars: 12,
            max_worlds: 1 << 20,
        }
    }
}

/// A bucket's constraints as `A m <= bounds` over its world distribution `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledBucket {
    pub bucket: Bucket,
    pub space: WorldSpace,
    /// One row per constraint of the bucket, in bucket order.
    pub rows: Vec<Vec<f64>>,
    pub bounds: Vec<f64>,
    /// Source statement of each row.
    pub sources: Vec<usize>,
}

impl CompiledBucket {
    pub fn num_worlds(&self) -> usize {
        self.space.size()
    }

    /// `A m - bounds`.
    pub fn residuals(&self, m: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.bounds)
            .map(|(row, b)| row.iter().zip(m).map(|(a, x)| a * x).sum::<f64>() - b)
            .collect()
    }

    pub fn max_violation(&self, m: &[f64]) -> f64 {
        self.residuals(m).into_iter().fold(0.0, f64::max)
    }
}

pub fn compile_bucket(
    bucket: &Bucket,
    constraints: &[LinearConstraint],
    variables: &[Variable],
    caps: BucketCaps,
) -> Result<CompiledBucket, LogicError> {
    let arities: Vec<usize> = bucket.scope.iter().map(|&v| variables[v].arity).collect();
    let worlds: u128 = arities.iter().map(|&a| a as u128).product();
    if bucket.scope.len() > caps.max_vars || worlds > caps.max_worlds as u128 {
        return Err(LogicError::BucketTooLarge {
            vars: bucket.scope.len(),
            worlds,
            max_vars: caps.max_vars,
            max_worlds: caps.max_worlds,
        });
    }
    let space = WorldSpace::new(&arities).expect("world count within cap");
    let mut rows = Vec::with_capacity(bucket.constraints.len());
    let mut bounds = Vec::with_capacity(bucket.constraints.len());
    let mut sources = Vec::with_capacity(bucket.constraints.len());
    for &ci in &bucket.constraints {
        let c = &constraints[ci];
        let mut row = vec![0.0; space.size()];
        for t in &c.terms {
            let ind = compile_indicator(&t.formula, &bucket.scope, &arities)?;
            for (r, &b) in row.iter_mut().zip(&ind.bits) {
                if b {
                    *r += t.coeff;
                }
            }
        }
        rows.push(row);
        bounds.push(c.bound);
        sources.push(c.source);
    }
    Ok(CompiledBucket {
        bucket: bucket.clone(),
        space,
        rows,
        bounds,
        sources,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// A world distribution satisfying the bucket's rows.
    Feasible(Vec<f64>),
    Infeasible,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

/// Is there a distribution over the bucket's worlds satisfying every row?
///
/// A `hint` that already satisfies the rows within `tol` is returned as the
/// witness without solving the LP.
pub fn feasibility_check(bucket: &CompiledBucket, hint: Option<&[f64]>, tol: f64) -> Result<Feasibility, LogicError> {
    if let Some(h) = hint {
        let on_simplex = h.len() == bucket.num_worlds()
            && h.iter().all(|&x| x >= -tol)
            && (h.iter().sum::<f64>() - 1.0).abs() <= tol;
        if on_simplex && bucket.max_violation(h) <= tol {
            return Ok(Feasibility::Feasible(h.to_vec()));
        }
    }
    let n = bucket.num_worlds();
    let mut rows: Vec<Row> = bucket
        .rows
        .iter()
        .zip(&bucket.bounds)
        .map(|(a, &b)| Row::new(a.clone(), lp::Relation::Le, b))
        .collect();
    rows.push(Row::new(vec![1.0; n], lp::Relation::Eq, 1.0));
    let opts = LpOptions {
        feasibility_tol: tol.max(1e-12),
        ..LpOptions::default()
    };
    Ok(match lp::find_feasible_point(n, rows, &opts)? {
        Some(mut m) => {
            let s: f64 = m.iter().sum();
            m.iter_mut().for_each(|x| *x /= s);
            Feasibility::Feasible(m)
        }
        None => Feasibility::Infeasible,
    })
}
