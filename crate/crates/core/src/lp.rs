//! Dense two-phase simplex with Bland's rule.
//!
//! Minimizes `c . x` subject to linear rows and `x >= 0`. Intended for the
//! small feasibility problems of a constraint bucket (a handful of rows, at
//! most a few thousand columns); no sparsity or factorization tricks.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("row {row} has {found} coefficients, expected {expected}")]
    Dimension { row: usize, found: usize, expected: usize },
    #[error("non-finite coefficient in linear program")]
    NonFinite,
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub max_pivots: usize,
    /// Pivot and reduced-cost threshold.
    pub eps: f64,
    /// Phase-one optimum above this (scaled by `1 + sum |rhs|`) means infeasible.
    pub feasibility_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_pivots: 100_000,
            eps: 1e-11,
            feasibility_tol: 1e-9,
        }
    }
}

struct Tableau {
    /// `m` rows of `cols + 1` entries; the last entry is the right-hand side.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    first_artificial: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut reduced = cost.to_vec();
        reduced.push(0.0);
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                for (r, v) in reduced.iter_mut().zip(row) {
                    *r -= cb * v;
                }
            }
        }
        reduced
    }

    /// Runs Bland's-rule pivots on `cost` over columns `< allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize, opts: &LpOptions, pivots: &mut usize) -> Result<bool, LpError> {
        loop {
            let reduced = self.reduced_costs(cost);
            let Some(enter) = (0..allowed).find(|&j| reduced[j] < -opts.eps) else {
                return Ok(true);
            };
            let rhs = self.cols;
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > opts.eps {
                    let ratio = row[rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-15 || (ratio <= best + 1e-15 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            self.pivot(r, enter);
            *pivots += 1;
            if *pivots > opts.max_pivots {
                return Err(LpError::IterationLimit(opts.max_pivots));
            }
        }
    }
}

pub fn solve(lp: &LinearProgram, opts: &LpOptions) -> Result<LpOutcome, LpError> {
    let n = lp.objective.len();
    for (i, row) in lp.rows.iter().enumerate() {
        if row.coeffs.len() != n {
            return Err(LpError::Dimension {
                row: i,
                found: row.coeffs.len(),
                expected: n,
            });
        }
        if !row.rhs.is_finite() || row.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite);
        }
    }
    if lp.objective.iter().any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite);
    }

    // Normalize to non-negative right-hand sides.
    let rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .rows
        .iter()
        .map(|r| {
            if r.rhs < 0.0 {
                let flipped = match r.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (r.coeffs.iter().map(|v| -v).collect(), flipped, -r.rhs)
            } else {
                (r.coeffs.clone(), r.relation, r.rhs)
            }
        })
        .collect();
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let first_artificial = n + n_slack;
    let cols = first_artificial + n_art;

    let mut tableau = Tableau {
        rows: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        cols,
        first_artificial,
    };
    let (mut slack, mut art) = (n, first_artificial);
    for (coeffs, relation, rhs) in &rows {
        let mut row = vec![0.0; cols + 1];
        row[..n].copy_from_slice(coeffs);
        row[cols] = *rhs;
        match relation {
            Relation::Le => {
                row[slack] = 1.0;
                tableau.basis.push(slack);
                slack += 1;
            }
            Relation::Ge => {
                row[slack] = -1.0;
                slack += 1;
                row[art] = 1.0;
                tableau.basis.push(art);
                art += 1;
            }
            Relation::Eq => {
                row[art] = 1.0;
                tableau.basis.push(art);
                art += 1;
            }
        }
        tableau.rows.push(row);
    }

    let mut pivots = 0;
    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(first_artificial) {
            *c = 1.0;
        }
        tableau.optimize(&phase1, cols, opts, &mut pivots)?;
        let infeasibility: f64 = tableau
            .rows
            .iter()
            .zip(&tableau.basis)
            .filter(|(_, &b)| b >= first_artificial)
            .map(|(row, _)| row[cols])
            .sum();
        let scale = 1.0 + rows.iter().map(|r| r.2.abs()).sum::<f64>();
        if infeasibility > opts.feasibility_tol * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive zero-valued artificials out of the basis where possible;
        // rows where that fails are redundant and stay inert.
        for r in 0..m {
            if tableau.basis[r] >= first_artificial {
                if let Some(c) = (0..first_artificial).find(|&c| tableau.rows[r][c].abs() > opts.eps) {
                    tableau.pivot(r, c);
                }
            }
        }
    }

    let mut cost = lp.objective.clone();
    cost.resize(cols, 0.0);
    let bounded = tableau.optimize(&cost, tableau.first_artificial, opts, &mut pivots)?;
    if !bounded {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = vec![0.0; n];
    for (row, &b) in tableau.rows.iter().zip(&tableau.basis) {
        if b < n {
            x[b] = row[cols].max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, objective })
}

/// Some `x >= 0` satisfying all rows, if one exists.
pub fn find_feasible_point(n: usize, rows: Vec<Row>, opts: &LpOptions) -> Result<Option<Vec<f64>>, LpError> {
    let lp = LinearProgram {
        objective: vec![0.0; n],
        rows,
    };
    match solve(&lp, opts)? {
        LpOutcome::Optimal { x, .. } => Ok(Some(x)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => unreachable!("zero objective is bounded"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(outcome: LpOutcome) -> (Vec<f64>, f64) {
        match outcome {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let lp = LinearProgram {
            objective: vec![-3.0, -5.0],
            rows: vec![
                Row::new(vec![1.0, 0.0], Relation::Le, 4.0),
                Row::new(vec![0.0, 2.0], Relation::Le, 12.0),
                Row::new(vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        };
        let (x, obj) = optimal(solve(&lp, &LpOptions::default()).unwrap());
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
        assert!((obj + 36.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge_rows_need_phase_one() {
        // min x + y  s.t. x + y = 1, x >= 0.3 (as -x <= -0.3)
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            rows: vec![
                Row::new(vec![1.0, 1.0], Relation::Eq, 1.0),
                Row::new(vec![-1.0, 0.0], Relation::Le, -0.3),
            ],
        };
        let (x, obj) = optimal(solve(&lp, &LpOptions::default()).unwrap());
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        assert!((obj - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let rows = vec![
            Row::new(vec![1.0, 1.0], Relation::Eq, 1.0),
            Row::new(vec![0.0, 1.0], Relation::Le, 0.3),
            Row::new(vec![0.0, 1.0], Relation::Ge, 0.7),
        ];
        assert_eq!(find_feasible_point(2, rows, &LpOptions::default()).unwrap(), None);
    }

    #[test]
    fn unbounded_is_detected() {
        let lp = LinearProgram {
            objective: vec![-1.0],
            rows: vec![Row::new(vec![-1.0], Relation::Le, 0.0)],
        };
        assert_eq!(solve(&lp, &LpOptions::default()).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let rows = vec![
            Row::new(vec![1.0, 1.0], Relation::Eq, 1.0),
            Row::new(vec![2.0, 2.0], Relation::Eq, 2.0),
            Row::new(vec![0.0, 1.0], Relation::Eq, 0.5),
        ];
        let x = find_feasible_point(2, rows, &LpOptions::default()).unwrap().unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example cycles under the textbook most-negative rule.
        let lp = LinearProgram {
            objective: vec![-0.75, 150.0, -0.02, 6.0],
            rows: vec![
                Row::new(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0),
                Row::new(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0),
                Row::new(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0),
            ],
        };
        let (_, obj) = optimal(solve(&lp, &LpOptions::default()).unwrap());
        assert!((obj + 0.05).abs() < 1e-12);
    }
}
