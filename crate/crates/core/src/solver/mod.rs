//! Per-bucket convex program: minimize the weighted cross-entropy
//! `-sum_l w_l sum_x p_l(x) log theta_l(x)` over one simplex per leaf,
//! subject to `A m <= alpha` on the mixture `m = sum_l w_l theta_l`.

mod dual;
mod problem;

use serde::Serialize;
use thiserror::Error;

use crate::lp::{self, LpOptions, Row};

pub use problem::{apply_solution, assemble_bucket_problem, BucketProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("constraints admit no distribution over the bucket worlds")]
    Infeasible,
    #[error("bucket {scope:?} is not co-scoped: {reason}")]
    ScopingViolation { scope: Vec<usize>, reason: String },
    #[error("malformed bucket problem: {0}")]
    Malformed(String),
    #[error("linear program failed: {0}")]
    Lp(#[from] lp::LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Mixing weight toward uniform applied to each leaf table.
    pub smoothing: f64,
    /// Skip the LP check (the caller already ran it).
    pub assume_feasible: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            smoothing: 1e-9,
            assume_feasible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub theta: Vec<Vec<f64>>,
    /// `sum_l w_l H(p_l, theta_l)` with the unsmoothed tables, in nats.
    pub objective: f64,
    /// One non-negative multiplier per row of `A`.
    pub dual: Vec<f64>,
    pub kkt_residual: f64,
    pub status: Status,
    pub iterations: usize,
    /// Dual value after each accepted step.
    pub dual_trace: Vec<f64>,
    pub notes: Vec<String>,
}

impl Solution {
    pub fn mixture(&self, w: &[f64]) -> Vec<f64> {
        mixture(w, &self.theta)
    }
}

pub(crate) fn mixture(w: &[f64], tables: &[Vec<f64>]) -> Vec<f64> {
    let n = tables.first().map_or(0, Vec::len);
    let mut m = vec![0.0; n];
    for (t, &wl) in tables.iter().zip(w) {
        for (mx, tx) in m.iter_mut().zip(t) {
            *mx += wl * tx;
        }
    }
    m
}

/// `-sum_l w_l sum_x p_l(x) log theta_l(x)` with `0 log 0 = 0`.
pub fn weighted_cross_entropy(w: &[f64], p: &[Vec<f64>], theta: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for ((pl, tl), &wl) in p.iter().zip(theta).zip(w) {
        if wl == 0.0 {
            continue;
        }
        for (&px, &tx) in pl.iter().zip(tl) {
            if px > 0.0 {
                total -= wl * px * tx.ln();
            }
        }
    }
    total
}

fn max_violation(a: &[Vec<f64>], alpha: &[f64], m: &[f64]) -> f64 {
    a.iter()
        .zip(alpha)
        .map(|(row, b)| row.iter().zip(m).map(|(x, y)| x * y).sum::<f64>() - b)
        .fold(0.0, f64::max)
}

/// Solves one bucket problem by dual ascent.
///
/// If the leaf tables already satisfy the constraints within `tol`, they
/// are returned unchanged with zero multipliers.
pub fn solve_bucket(problem: &BucketProblem, opts: &SolverOptions) -> Result<Solution, SolverError> {
    problem.check()?;
    let n_rows = problem.a.len();
    let worlds = problem.num_worlds();

    let m0 = mixture(&problem.w, &problem.p);
    if max_violation(&problem.a, &problem.alpha, &m0) <= opts.tol {
        return Ok(Solution {
            theta: problem.p.clone(),
            objective: weighted_cross_entropy(&problem.w, &problem.p, &problem.p),
            dual: vec![0.0; n_rows],
            kkt_residual: 0.0,
            status: Status::Optimal,
            iterations: 0,
            dual_trace: Vec::new(),
            notes: Vec::new(),
        });
    }

    if !opts.assume_feasible {
        let mut rows: Vec<Row> = problem
            .a
            .iter()
            .zip(&problem.alpha)
            .map(|(r, &b)| Row::new(r.clone(), lp::Relation::Le, b))
            .collect();
        rows.push(Row::new(vec![1.0; worlds], lp::Relation::Eq, 1.0));
        let lp_opts = LpOptions {
            feasibility_tol: opts.tol.min(1e-9),
            ..LpOptions::default()
        };
        if lp::find_feasible_point(worlds, rows, &lp_opts)?.is_none() {
            return Err(SolverError::Infeasible);
        }
    }

    let mut notes = Vec::new();
    let active: Vec<usize> = (0..problem.w.len()).filter(|&l| problem.w[l] > 0.0).collect();
    if active.len() < problem.w.len() {
        notes.push(format!(
            "{} leaves have zero weight and were set to uniform",
            problem.w.len() - active.len()
        ));
    }
    let eps = opts.smoothing;
    let smoothed: Vec<Vec<f64>> = active
        .iter()
        .map(|&l| {
            let row: Vec<f64> = problem.p[l]
                .iter()
                .map(|&x| (1.0 - eps) * x + eps / worlds as f64)
                .collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let w_active: Vec<f64> = active.iter().map(|&l| problem.w[l]).collect();
    let reduced = dual::Reduced::new(&problem.a, &problem.alpha);
    let ctx = dual::DualContext {
        w: &w_active,
        c: &w_active,
        p: &smoothed,
        reduced: &reduced,
        worlds,
    };
    let mut run = ascend(&ctx, opts);
    let mut support: Option<Vec<usize>> = None;

    if run.residual > opts.tol {
        // The optimum may sit on the boundary (some worlds forced to zero
        // mass), where the dual has no finite maximizer. Restrict to the
        // worlds some feasible point can charge and solve again there.
        let keep = feasible_support(&problem.a, &problem.alpha, worlds, opts)?;
        if !keep.is_empty() && keep.len() < worlds {
            let a_s: Vec<Vec<f64>> = problem.a.iter().map(|r| keep.iter().map(|&x| r[x]).collect()).collect();
            let mut c = Vec::with_capacity(active.len());
            let p_s: Vec<Vec<f64>> = smoothed
                .iter()
                .zip(&w_active)
                .map(|(row, &w)| {
                    let mass: f64 = keep.iter().map(|&x| row[x]).sum();
                    c.push(w * mass);
                    keep.iter().map(|&x| row[x] / mass).collect()
                })
                .collect();
            let reduced_s = dual::Reduced::new(&a_s, &problem.alpha);
            let ctx_s = dual::DualContext {
                w: &w_active,
                c: &c,
                p: &p_s,
                reduced: &reduced_s,
                worlds: keep.len(),
            };
            let retry = ascend(&ctx_s, opts);
            notes.push(format!(
                "{} of {worlds} worlds cannot carry mass under the constraints; solved on the remaining support",
                worlds - keep.len()
            ));
            let lambda = reduced_s.expand(&retry.point.lambda, n_rows);
            let iterations = run.iterations + retry.iterations;
            let mut trace = std::mem::take(&mut run.trace);
            trace.extend(&retry.trace);
            run = Run {
                iterations,
                trace,
                ..retry
            };
            run.lambda_full = Some(lambda);
            support = Some(keep);
        }
    }

    let residual = run.residual;
    let status = if residual <= opts.tol {
        Status::Optimal
    } else {
        notes.push(format!("stopped with KKT residual {residual:.3e}"));
        Status::IterationLimit
    };
    let uniform = vec![1.0 / worlds as f64; worlds];
    let mut theta = vec![uniform; problem.w.len()];
    for (t, &l) in run.point.theta.into_iter().zip(&active) {
        theta[l] = match &support {
            None => t,
            Some(keep) => {
                let mut full = vec![0.0; worlds];
                for (&x, v) in keep.iter().zip(t) {
                    full[x] = v;
                }
                full
            }
        };
    }
    Ok(Solution {
        objective: weighted_cross_entropy(&problem.w, &problem.p, &theta),
        theta,
        dual: run.lambda_full.unwrap_or_else(|| reduced.expand(&run.point.lambda, n_rows)),
        kkt_residual: residual,
        status,
        iterations: run.iterations,
        dual_trace: run.trace,
        notes,
    })
}

struct Run {
    point: dual::DualPoint,
    residual: f64,
    iterations: usize,
    trace: Vec<f64>,
    lambda_full: Option<Vec<f64>>,
}

/// Projected Newton ascent on the dual.
fn ascend(ctx: &dual::DualContext, opts: &SolverOptions) -> Run {
    let reduced = ctx.reduced;
    let k = reduced.len();
    let kkt = |pt: &dual::DualPoint| -> f64 {
        let mut r: f64 = pt.normalization_error;
        for i in 0..k {
            let res = pt.residual[i];
            let feas = if reduced.free[i] { res.abs() } else { res.max(0.0) };
            r = r.max(feas).max((pt.lambda[i] * res).abs());
        }
        r
    };

    let mut point = ctx.eval(vec![0.0; k]);
    let mut trace = vec![point.value];
    let mut iterations = 0;
    let mut converged = kkt(&point) <= opts.tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let lam = &point.lambda;
        let r = &point.residual;
        // multipliers this large mean the optimum is on the boundary
        if lam.iter().any(|l| l.abs() > 1e12) {
            break;
        }
        let free_set: Vec<usize> = (0..k)
            .filter(|&i| reduced.free[i] || lam[i] > 0.0 || r[i] > 0.0)
            .collect();
        if free_set.is_empty() {
            break;
        }
        let hessian = ctx.hessian(&point);
        let sub = hessian.select_rows(&free_set).select_columns(&free_set);
        let rhs: Vec<f64> = free_set.iter().map(|&i| r[i]).collect();

        let project = |step: &[f64], s: f64| -> Vec<f64> {
            let mut next = lam.clone();
            for (&i, &di) in free_set.iter().zip(step) {
                let v = lam[i] + s * di;
                next[i] = if reduced.free[i] { v } else { v.max(0.0) };
            }
            next
        };
        let try_direction = |dir: &[f64], first: f64| -> Option<dual::DualPoint> {
            let noise = 1e-12 * (1.0 + point.value.abs());
            let mut s = first;
            for _ in 0..60 {
                let cand = project(dir, s);
                let ascent: f64 = (0..k).map(|i| r[i] * (cand[i] - lam[i])).sum();
                if ascent <= 0.0 {
                    s *= 0.5;
                    continue;
                }
                let next = ctx.eval(cand);
                if next.value.is_finite() && next.value >= point.value + 1e-4 * ascent - noise {
                    return Some(next);
                }
                s *= 0.5;
            }
            None
        };

        let mut accepted = dual::newton_direction(&sub, &rhs).and_then(|d| try_direction(&d, 1.0));
        if accepted.is_none() {
            let curvature = (0..free_set.len()).map(|i| sub[(i, i)].abs()).fold(0.0, f64::max);
            accepted = try_direction(&rhs, 1.0 / curvature.max(1e-12));
        }
        match accepted {
            Some(next) => {
                point = next;
                trace.push(point.value);
                converged = kkt(&point) <= opts.tol;
            }
            None => break,
        }
    }
    Run {
        residual: kkt(&point),
        point,
        iterations,
        trace,
        lambda_full: None,
    }
}

/// Worlds that some feasible bucket distribution gives positive mass.
///
/// One LP on the homogenized cone: maximize `sum s_x` subject to
/// `A m <= alpha t`, `sum m = t`, `0 <= s_x <= min(m_x, 1)`. Scaling lets
/// every world that can be charged reach `s_x = 1`.
fn feasible_support(a: &[Vec<f64>], alpha: &[f64], n: usize, opts: &SolverOptions) -> Result<Vec<usize>, SolverError> {
    let cols = 2 * n + 1;
    let mut rows = Vec::with_capacity(a.len() + 2 * n + 1);
    for (row, &b) in a.iter().zip(alpha) {
        let mut c = vec![0.0; cols];
        c[..n].copy_from_slice(row);
        c[2 * n] = -b;
        rows.push(Row::new(c, lp::Relation::Le, 0.0));
    }
    let mut c = vec![0.0; cols];
    c[..n].iter_mut().for_each(|x| *x = 1.0);
    c[2 * n] = -1.0;
    rows.push(Row::new(c, lp::Relation::Eq, 0.0));
    for x in 0..n {
        let mut c = vec![0.0; cols];
        c[n + x] = 1.0;
        c[x] = -1.0;
        rows.push(Row::new(c, lp::Relation::Le, 0.0));
        let mut c = vec![0.0; cols];
        c[n + x] = 1.0;
        rows.push(Row::new(c, lp::Relation::Le, 1.0));
    }
    let mut objective = vec![0.0; cols];
    objective[n..2 * n].iter_mut().for_each(|x| *x = -1.0);
    let lp_opts = LpOptions {
        feasibility_tol: opts.tol.min(1e-9),
        ..LpOptions::default()
    };
    match lp::solve(&lp::LinearProgram { objective, rows }, &lp_opts)? {
        lp::LpOutcome::Optimal { x, .. } => Ok((0..n).filter(|&i| x[n + i] > 0.5).collect()),
        _ => Ok((0..n).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(w: Vec<f64>, p: Vec<Vec<f64>>, a: Vec<Vec<f64>>, alpha: Vec<f64>) -> BucketProblem {
        BucketProblem {
            scope: vec![0],
            leaf_ids: (0..w.len()).map(crate::circuit::NodeId).collect(),
            w,
            p,
            a,
            alpha,
        }
    }

    #[test]
    fn no_constraints_is_identity() {
        let p = vec![vec![0.3, 0.7], vec![0.9, 0.1]];
        let pr = problem(vec![0.4, 0.6], p.clone(), vec![], vec![]);
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.theta, p);
        let h = |q: &[f64]| -q.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((s.objective - (0.4 * h(&p[0]) + 0.6 * h(&p[1]))).abs() < 1e-15);
    }

    #[test]
    fn single_leaf_equality_pins_theta() {
        let pr = problem(
            vec![1.0],
            vec![vec![0.8, 0.2]],
            vec![vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![0.5, -0.5],
        );
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.theta[0][0] - 0.5).abs() < 1e-8 && (s.theta[0][1] - 0.5).abs() < 1e-8);
        assert!(s.dual[0] == 0.0 && s.dual[1] > 0.0);
    }

    #[test]
    fn two_leaves_share_the_correction() {
        let pr = problem(
            vec![0.6, 0.4],
            vec![vec![0.9, 0.1], vec![0.5, 0.5]],
            vec![vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![0.5, -0.5],
        );
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        let m = s.mixture(&pr.w);
        assert!((m[1] - 0.5).abs() <= 1e-8);
        // Stationarity: w p / theta - w a is constant within each leaf.
        let a: Vec<f64> = (0..2).map(|x| s.dual[0] * pr.a[0][x] + s.dual[1] * pr.a[1][x]).collect();
        for l in 0..2 {
            let mu: Vec<f64> = (0..2)
                .map(|x| pr.w[l] * pr.p[l][x] / s.theta[l][x] - pr.w[l] * a[x])
                .collect();
            assert!((mu[0] - mu[1]).abs() < 1e-6, "{mu:?}");
        }
    }

    #[test]
    fn infeasible_constraints_are_reported() {
        let pr = problem(
            vec![1.0],
            vec![vec![0.5, 0.5]],
            vec![vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![0.3, -0.7],
        );
        assert_eq!(solve_bucket(&pr, &SolverOptions::default()), Err(SolverError::Infeasible));
    }

    #[test]
    fn zero_weight_leaves_become_uniform() {
        let pr = problem(
            vec![1.0, 0.0],
            vec![vec![0.8, 0.2], vec![0.1, 0.9]],
            vec![vec![0.0, -1.0]],
            vec![-0.4],
        );
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.theta[1], vec![0.5, 0.5]);
        assert!((s.theta[0][1] - 0.4).abs() < 1e-8);
        assert_eq!(s.notes.len(), 1);
    }

    #[test]
    fn forced_zero_world_conditions_each_leaf() {
        let pr = problem(
            vec![0.5, 0.5],
            vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1]],
            vec![vec![0.0, 0.0, 1.0]],
            vec![0.0],
        );
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        for (t, want) in s.theta.iter().zip([[0.4, 0.6, 0.0], [2.0 / 3.0, 1.0 / 3.0, 0.0]]) {
            for (a, b) in t.iter().zip(want) {
                assert!((a - b).abs() < 1e-7, "{t:?}");
            }
        }
        assert!(s.objective.is_infinite());
        assert!(s.notes.iter().any(|n| n.contains("support")));
    }

    #[test]
    fn forced_zero_world_with_a_binding_row() {
        // world 2 is excluded and m_0 = 0.5 must hold as well
        let pr = problem(
            vec![0.3, 0.7],
            vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1]],
            vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]],
            vec![0.0, 0.5, -0.5],
        );
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        let m = s.mixture(&pr.w);
        assert!(m[2].abs() < 1e-12 && (m[0] - 0.5).abs() < 1e-8, "{m:?}");
        // stationarity on the support: p_l(S) (p'_l(0)/theta_l(0) - p'_l(1)/theta_l(1))
        // equals the multiplier of the m_0 row for every leaf
        let g: Vec<f64> = (0..2)
            .map(|l| {
                let (p, t) = (&pr.p[l], &s.theta[l]);
                let mass = p[0] + p[1];
                (p[0] / mass / t[0] - p[1] / mass / t[1]) * mass
            })
            .collect();
        assert!((g[0] - g[1]).abs() < 1e-6, "{g:?}");
    }

    #[test]
    fn dual_values_never_decrease() {
        let pr = problem(
            vec![0.2, 0.3, 0.5],
            vec![vec![0.7, 0.1, 0.1, 0.1], vec![0.25; 4], vec![0.05, 0.05, 0.1, 0.8]],
            vec![vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0, -1.0, -1.0], vec![1.0, -2.0, 0.5, 0.0]],
            vec![0.2, -0.7, 0.05],
        );
        let s = solve_bucket(&pr, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        for w in s.dual_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()));
        }
        let m = s.mixture(&pr.w);
        assert!(max_violation(&pr.a, &pr.alpha, &m) <= 1e-8);
    }
}
