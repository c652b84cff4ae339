//! Dual ascent for the per-bucket program.
//!
//! For multipliers `lambda` (one per reduced row `G_k`, `h_k`) the inner
//! minimizer over each simplex is `theta_x = p_x / (nu + kappa a_x)` with
//! `a = G^T lambda` and `kappa` the ratio of mixture to objective weight
//! (1 unless the support was reduced), so the dual is smooth and its
//! gradient is `G m - h`.

use nalgebra::{DMatrix, DVector};

/// Constraint rows after folding exact `=` pairs into one free multiplier.
pub(super) struct Reduced {
    pub rows: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub free: Vec<bool>,
    /// Original row of each reduced row, and its negated partner if folded.
    pub origin: Vec<(usize, Option<usize>)>,
}

impl Reduced {
    pub fn new(a: &[Vec<f64>], alpha: &[f64]) -> Self {
        let mut used = vec![false; a.len()];
        let mut out = Reduced {
            rows: Vec::new(),
            h: Vec::new(),
            free: Vec::new(),
            origin: Vec::new(),
        };
        for i in 0..a.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            let partner = (i + 1..a.len()).find(|&j| {
                !used[j] && alpha[j] == -alpha[i] && a[j].iter().zip(&a[i]).all(|(x, y)| *x == -*y)
            });
            if let Some(j) = partner {
                used[j] = true;
            }
            out.rows.push(a[i].clone());
            out.h.push(alpha[i]);
            out.free.push(partner.is_some());
            out.origin.push((i, partner));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Multipliers per original row, all non-negative.
    pub fn expand(&self, lambda: &[f64], n_rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_rows];
        for (k, &(i, j)) in self.origin.iter().enumerate() {
            match j {
                Some(j) => {
                    out[i] = lambda[k].max(0.0);
                    out[j] = (-lambda[k]).max(0.0);
                }
                None => out[i] = lambda[k],
            }
        }
        out
    }
}

/// Everything the outer loop needs at one multiplier vector.
pub(super) struct DualPoint {
    pub lambda: Vec<f64>,
    pub value: f64,
    pub residual: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    /// Largest simplex-normalization error before renormalizing.
    pub normalization_error: f64,
}

/// Positive `t` with `sum_x p_x / (t + d_x) = 1`, where `d >= 0` has a zero
/// entry and `p` sums to one (so the root lies in `(0, 1]`). Newton on the
/// convex decreasing residual, guarded by a bracket.
pub(super) fn normalizer(p: &[f64], d: &[f64]) -> f64 {
    let eval = |t: f64| {
        let mut f = -1.0;
        let mut df = 0.0;
        for (&px, &dx) in p.iter().zip(d) {
            let inv = 1.0 / (t + dx);
            f += px * inv;
            df -= px * inv * inv;
        }
        (f, df)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut t = 1.0;
    let (mut f, mut df) = eval(t);
    if f >= 0.0 {
        return t;
    }
    for _ in 0..200 {
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = t - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 4.0 * f64::EPSILON * t || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        t = next;
        (f, df) = eval(t);
        if f.abs() <= 4.0 * f64::EPSILON {
            return t;
        }
    }
    t
}

pub(super) struct DualContext<'a> {
    /// Mixture weights.
    pub w: &'a [f64],
    /// Objective weights; equal to `w` except after support reduction.
    pub c: &'a [f64],
    /// Smoothed leaf tables of the leaves with positive weight.
    pub p: &'a [Vec<f64>],
    pub reduced: &'a Reduced,
    pub worlds: usize,
}

impl DualContext<'_> {
    pub fn eval(&self, lambda: Vec<f64>) -> DualPoint {
        let mut a = vec![0.0; self.worlds];
        for (row, &l) in self.reduced.rows.iter().zip(&lambda) {
            if l != 0.0 {
                for (ax, gx) in a.iter_mut().zip(row) {
                    *ax += l * gx;
                }
            }
        }
        let a_min = a.iter().copied().fold(f64::INFINITY, f64::min);
        let d: Vec<f64> = a.iter().map(|x| x - a_min).collect();
        let mut m = vec![0.0; self.worlds];
        let mut neg_loglik = 0.0;
        let mut normalization_error: f64 = 0.0;
        let mut dl = vec![0.0; self.worlds];
        let theta: Vec<Vec<f64>> = self
            .p
            .iter()
            .zip(self.w)
            .zip(self.c)
            .map(|((p, &w), &c)| {
                let kappa = w / c;
                dl.iter_mut().zip(&d).for_each(|(y, x)| *y = kappa * x);
                let t = normalizer(p, &dl);
                let mut th: Vec<f64> = p.iter().zip(&dl).map(|(px, dx)| px / (t + dx)).collect();
                let s: f64 = th.iter().sum();
                normalization_error = normalization_error.max((s - 1.0).abs());
                th.iter_mut().for_each(|x| *x /= s);
                for ((mx, tx), px) in m.iter_mut().zip(&th).zip(p) {
                    *mx += w * tx;
                    neg_loglik -= c * px * tx.ln();
                }
                th
            })
            .collect();
        let residual: Vec<f64> = self
            .reduced
            .rows
            .iter()
            .zip(&self.reduced.h)
            .map(|(row, h)| row.iter().zip(&m).map(|(g, x)| g * x).sum::<f64>() - h)
            .collect();
        let value = neg_loglik + lambda.iter().zip(&residual).map(|(l, r)| l * r).sum::<f64>();
        DualPoint {
            lambda,
            value,
            residual,
            theta,
            normalization_error,
        }
    }

    /// Dual Hessian (negative semidefinite) at `point`.
    pub fn hessian(&self, point: &DualPoint) -> DMatrix<f64> {
        let k = self.reduced.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut sg = vec![0.0; k];
        for (((theta, p), &w), &c) in point.theta.iter().zip(self.p).zip(self.w).zip(self.c) {
            let s: Vec<f64> = theta.iter().zip(p).map(|(t, px)| t * t / px).collect();
            let s_sum: f64 = s.iter().sum();
            for (d, row) in self.reduced.rows.iter().enumerate() {
                sg[d] = s.iter().zip(row).map(|(sx, g)| sx * g).sum();
            }
            for d in 0..k {
                for e in d..k {
                    let cross: f64 = s
                        .iter()
                        .zip(&self.reduced.rows[d])
                        .zip(&self.reduced.rows[e])
                        .map(|((sx, gd), ge)| sx * gd * ge)
                        .sum();
                    let v = -w * (w / c) * (cross - sg[d] * sg[e] / s_sum);
                    h[(d, e)] += v;
                    if d != e {
                        h[(e, d)] += v;
                    }
                }
            }
        }
        h
    }
}

/// `(-H + delta I) x = r` by Cholesky, raising `delta` until it factors.
pub(super) fn newton_direction(hessian: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let scale = (0..n).map(|i| hessian[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut delta = 1e-12 * scale;
    let neg = -hessian;
    let b = DVector::from_column_slice(rhs);
    for _ in 0..40 {
        let mut m = neg.clone();
        for i in 0..n {
            m[(i, i)] += delta;
        }
        if let Some(ch) = m.cholesky() {
            let x = ch.solve(&b);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x.iter().copied().collect());
            }
        }
        delta *= 10.0;
    }
    None
}
