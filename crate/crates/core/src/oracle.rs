//! Brute-force references for tests: joint and mixture enumeration,
//! information measures, an independent bucket solver and a grid search
//! over the world simplex. None of this is tuned for speed.

use serde::Serialize;
use thiserror::Error;

use crate::circuit::{Circuit, Node, NodeId, VarId};
use crate::solver::{weighted_cross_entropy, BucketProblem, Solution, SolverError, Status};
use crate::world::WorldSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{worlds} assignments exceed the enumeration cap of {cap}")]
    TooLarge { worlds: u128, cap: usize },
    #[error("more than {cap} mixture components")]
    TooManyComponents { cap: usize },
    #[error("vectors of length {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("reference solver did not converge (violation {violation:.3e})")]
    IterationLimit { violation: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleCaps {
    pub max_worlds: usize,
    pub max_components: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        Self {
            max_worlds: 1 << 20,
            max_components: 4096,
        }
    }
}

fn full_space(circuit: &Circuit, cap: usize) -> Result<WorldSpace, OracleError> {
    let arities: Vec<usize> = circuit.variables().iter().map(|v| v.arity).collect();
    let worlds: u128 = arities.iter().map(|&a| a as u128).product();
    if worlds > cap as u128 {
        return Err(OracleError::TooLarge { worlds, cap });
    }
    Ok(WorldSpace::new(&arities).expect("within cap"))
}

/// `p(x)` for every full assignment, indexed like a world over all
/// variables in id order.
pub fn enumerate_joint(circuit: &Circuit, cap: usize) -> Result<Vec<f64>, OracleError> {
    let space = full_space(circuit, cap)?;
    let mut digits = vec![0; space.arities().len()];
    let mut evidence = vec![None; digits.len()];
    Ok((0..space.size())
        .map(|w| {
            space.decode_into(w, &mut digits);
            for (e, d) in evidence.iter_mut().zip(&digits) {
                *e = Some(*d);
            }
            circuit.evaluate_dense(&evidence)
        })
        .collect())
}

/// One induced tree: its weight and the leaves it reaches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Sorted leaf ids.
    pub leaves: Vec<NodeId>,
}

impl MixtureComponent {
    /// The component's leaf whose scope contains `var`.
    pub fn leaf_for(&self, circuit: &Circuit, var: VarId) -> Option<NodeId> {
        self.leaves
            .iter()
            .copied()
            .find(|&l| circuit.scope(l).binary_search(&var).is_ok())
    }

    /// `p_z(x)` of a full assignment.
    pub fn prob(&self, circuit: &Circuit, assignment: &[usize]) -> f64 {
        self.leaves
            .iter()
            .map(|&l| leaf_prob(circuit, l, assignment))
            .product()
    }
}

fn leaf_prob(circuit: &Circuit, leaf: NodeId, assignment: &[usize]) -> f64 {
    let Node::Leaf { scope, table } = circuit.node(leaf) else {
        unreachable!("components hold leaves")
    };
    let mut idx = 0;
    let mut stride = 1;
    for &v in scope {
        idx += assignment[v] * stride;
        stride *= circuit.arity(v);
    }
    table[idx]
}

/// Expands sum nodes into branches and product nodes into cross products.
pub fn enumerate_mixture(circuit: &Circuit, cap: usize) -> Result<Vec<MixtureComponent>, OracleError> {
    let mut comps: Vec<Option<Vec<MixtureComponent>>> = vec![None; circuit.num_nodes()];
    for &id in circuit.order() {
        let list = match circuit.node(id) {
            Node::Leaf { .. } => vec![MixtureComponent {
                weight: 1.0,
                leaves: vec![id],
            }],
            Node::Sum { children, weights } => {
                let mut out = Vec::new();
                for (c, &w) in children.iter().zip(weights) {
                    for comp in comps[c.0].as_ref().expect("children first") {
                        out.push(MixtureComponent {
                            weight: w * comp.weight,
                            leaves: comp.leaves.clone(),
                        });
                        if out.len() > cap {
                            return Err(OracleError::TooManyComponents { cap });
                        }
                    }
                }
                out
            }
            Node::Product { children } => {
                let mut out = vec![MixtureComponent {
                    weight: 1.0,
                    leaves: Vec::new(),
                }];
                for c in children {
                    let child = comps[c.0].as_ref().expect("children first");
                    if out.len().saturating_mul(child.len()) > cap {
                        return Err(OracleError::TooManyComponents { cap });
                    }
                    out = out
                        .iter()
                        .flat_map(|a| {
                            child.iter().map(move |b| {
                                let mut leaves = a.leaves.clone();
                                leaves.extend(&b.leaves);
                                MixtureComponent {
                                    weight: a.weight * b.weight,
                                    leaves,
                                }
                            })
                        })
                        .collect();
                }
                out
            }
        };
        comps[id.0] = Some(list);
    }
    let mut root = comps[circuit.root().0].take().expect("root reachable");
    for c in &mut root {
        c.leaves.sort_unstable();
    }
    Ok(root)
}

/// Joint rebuilt from components, for comparison with [`enumerate_joint`].
pub fn recombine(circuit: &Circuit, components: &[MixtureComponent], cap: usize) -> Result<Vec<f64>, OracleError> {
    let space = full_space(circuit, cap)?;
    let mut digits = vec![0; space.arities().len()];
    Ok((0..space.size())
        .map(|w| {
            space.decode_into(w, &mut digits);
            components.iter().map(|c| c.weight * c.prob(circuit, &digits)).sum()
        })
        .collect())
}

fn same_len(p: &[f64], q: &[f64]) -> Result<(), OracleError> {
    if p.len() == q.len() {
        Ok(())
    } else {
        Err(OracleError::LengthMismatch(p.len(), q.len()))
    }
}

/// `-sum p log p`, nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `-sum p log q`; infinite where `q = 0 < p`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64, OracleError> {
    same_len(p, q)?;
    let mut h = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            h -= a * b.ln();
        }
    }
    Ok(h)
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, OracleError> {
    same_len(p, q)?;
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d.max(0.0))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions {
    /// Target constraint violation.
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_outer: 80,
            max_inner: 20_000,
        }
    }
}

struct Penalized<'a> {
    w: &'a [f64],
    p: &'a [Vec<f64>],
    a: &'a [Vec<f64>],
    alpha: &'a [f64],
    y: Vec<f64>,
    rho: f64,
}

impl Penalized<'_> {
    fn violations(&self, theta: &[Vec<f64>]) -> Vec<f64> {
        let m = crate::solver::mixture(self.w, theta);
        self.a
            .iter()
            .zip(self.alpha)
            .map(|(row, b)| row.iter().zip(&m).map(|(x, y)| x * y).sum::<f64>() - b)
            .collect()
    }

    fn value(&self, theta: &[Vec<f64>]) -> f64 {
        let f = weighted_cross_entropy(self.w, self.p, theta);
        let c = self.violations(theta);
        let pen: f64 = self
            .y
            .iter()
            .zip(&c)
            .map(|(y, ck)| (y + self.rho * ck).max(0.0).powi(2) - y * y)
            .sum();
        f + pen / (2.0 * self.rho)
    }

    fn gradient(&self, theta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let c = self.violations(theta);
        let mult: Vec<f64> = self.y.iter().zip(&c).map(|(y, ck)| (y + self.rho * ck).max(0.0)).collect();
        let n = theta[0].len();
        let lin: Vec<f64> = (0..n)
            .map(|x| mult.iter().zip(self.a).map(|(mk, row)| mk * row[x]).sum())
            .collect();
        theta
            .iter()
            .zip(self.p)
            .zip(self.w)
            .map(|((t, p), &w)| {
                t.iter()
                    .zip(p)
                    .zip(&lin)
                    .map(|((tx, px), lx)| w * (lx - if *px > 0.0 { px / tx } else { 0.0 }))
                    .collect()
            })
            .collect()
    }
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x * y).sum()
}

/// Spectral projected gradient on the product of simplices, with the
/// non-monotone line search over the last few values.
fn minimize_inner(pen: &Penalized, theta: &mut Vec<Vec<f64>>, max_iter: usize) {
    const MEMORY: usize = 10;
    // gradients are centered per leaf (the projection ignores constant
    // shifts) and the result renormalized; with long steps the raw values
    // are large enough to cost digits in the threshold.
    let project = |t: &[Vec<f64>], g: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
        t.iter()
            .zip(g)
            .map(|(tl, gl)| {
                let mean = gl.iter().sum::<f64>() / gl.len() as f64;
                let mut q = project_simplex(&tl.iter().zip(gl).map(|(x, d)| x - s * (d - mean)).collect::<Vec<_>>());
                let total: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= total);
                q
            })
            .collect()
    };
    let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
            .collect()
    };
    let mut f = pen.value(theta);
    let mut g = pen.gradient(theta);
    let mut recent = std::collections::VecDeque::from([f]);
    let mut step = 1e-2;
    for _ in 0..max_iter {
        // unit-step projected gradient measures stationarity
        let pg = diff(&project(theta, &g, 1.0), theta);
        if pg.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())) <= 1e-13 {
            break;
        }
        let d = diff(&project(theta, &g, step), theta);
        let slope = dot(&g, &d);
        let fref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<Vec<f64>> = theta
                .iter()
                .zip(&d)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + t * y).collect())
                .collect();
            let fc = pen.value(&cand);
            if fc.is_finite() && fc <= fref + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((next, fnext)) = accepted else { break };
        let gnext = pen.gradient(&next);
        let s = diff(&next, theta);
        let yv = diff(&gnext, &g);
        let sy = dot(&s, &yv);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-10, 1e6) } else { 1e6 };
        *theta = next;
        f = fnext;
        g = gnext;
        recent.push_back(f);
        if recent.len() > MEMORY {
            recent.pop_front();
        }
    }
}

/// Independent solver for [`BucketProblem`]: augmented Lagrangian over
/// the constraint rows, penalty doubled while the violation stalls, inner
/// minimization by projected gradient.
pub fn reference_solve(problem: &BucketProblem, opts: &ReferenceOptions) -> Result<Solution, OracleError> {
    problem.check()?;
    let worlds = problem.num_worlds();
    let active: Vec<usize> = (0..problem.w.len()).filter(|&l| problem.w[l] > 0.0).collect();
    let w: Vec<f64> = active.iter().map(|&l| problem.w[l]).collect();
    let p: Vec<Vec<f64>> = active.iter().map(|&l| problem.p[l].clone()).collect();
    let mut theta: Vec<Vec<f64>> = p
        .iter()
        .map(|row| row.iter().map(|x| 0.999 * x + 0.001 / worlds as f64).collect())
        .collect();
    let mut pen = Penalized {
        w: &w,
        p: &p,
        a: &problem.a,
        alpha: &problem.alpha,
        y: vec![0.0; problem.a.len()],
        rho: 10.0,
    };
    let mut prev_violation = f64::INFINITY;
    let mut violation = f64::INFINITY;
    for _ in 0..opts.max_outer {
        minimize_inner(&pen, &mut theta, opts.max_inner);
        let c = pen.violations(&theta);
        violation = c.iter().fold(0.0f64, |m, &x| m.max(x));
        let slack = pen
            .y
            .iter()
            .zip(&c)
            .fold(0.0f64, |m, (y, ck)| m.max((y * ck).abs()));
        for (y, ck) in pen.y.iter_mut().zip(&c) {
            *y = (*y + pen.rho * ck).max(0.0);
        }
        if violation <= opts.tol && slack <= opts.tol {
            let mut full = vec![vec![1.0 / worlds as f64; worlds]; problem.w.len()];
            for (t, &l) in theta.into_iter().zip(&active) {
                full[l] = t;
            }
            let mut dual = pen.y.clone();
            dual.iter_mut().for_each(|d| *d = d.max(0.0));
            return Ok(Solution {
                objective: weighted_cross_entropy(&problem.w, &problem.p, &full),
                theta: full,
                dual,
                kkt_residual: violation.max(slack),
                status: Status::Optimal,
                iterations: 0,
                dual_trace: Vec::new(),
                notes: Vec::new(),
            });
        }
        if violation > 0.25 * prev_violation {
            pen.rho *= 2.0;
        }
        prev_violation = violation;
    }
    Err(OracleError::IterationLimit { violation })
}

/// Searches the simplex grid of resolution `1/steps` over `worlds` for a
/// point with `rows . m <= bounds + tol`.
pub fn grid_feasible(rows: &[Vec<f64>], bounds: &[f64], worlds: usize, steps: usize, tol: f64) -> Option<Vec<f64>> {
    fn rec(
        k: usize,
        left: usize,
        counts: &mut Vec<usize>,
        check: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        if k + 1 == counts.len() {
            counts[k] = left;
            return check(counts);
        }
        for c in 0..=left {
            counts[k] = c;
            if rec(k + 1, left - c, counts, check) {
                return true;
            }
        }
        false
    }
    if worlds == 0 {
        return None;
    }
    let mut counts = vec![0; worlds];
    let mut found = None;
    let mut check = |c: &[usize]| {
        let m: Vec<f64> = c.iter().map(|&x| x as f64 / steps as f64).collect();
        let ok = rows
            .iter()
            .zip(bounds)
            .all(|(r, b)| r.iter().zip(&m).map(|(x, y)| x * y).sum::<f64>() <= b + tol);
        if ok {
            found = Some(m);
        }
        ok
    };
    rec(0, steps, &mut counts, &mut check);
    found
}
