//! LearnSPN-style structure learner with keep-together variable groups.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::circuit::{Circuit, CircuitBuilder, CircuitError, NodeId, VarId, Variable};
use crate::data::{DataError, Dataset};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::world::WorldSpace;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("group {group:?} has more than {cap} joint states")]
    GroupArityOverflow { group: Vec<VarId>, cap: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

impl LearnError {
    pub fn code(&self) -> &'static str {
        match self {
            LearnError::EmptyDataset => "EMPTY_DATASET",
            LearnError::GroupArityOverflow { .. } => "GROUP_ARITY_OVERFLOW",
            LearnError::InvalidParams(_) => "INVALID_ARGUMENT",
            LearnError::Data(e) => e.code(),
            LearnError::Circuit(_) => "INVALID_CIRCUIT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnParams {
    /// p-value below which a pair is declared dependent.
    pub significance: f64,
    pub laplace: f64,
    /// Row splits stop below this many rows.
    pub min_instances: usize,
    pub n_clusters: usize,
    pub seed: u64,
    /// Variable sets that must end up in one joint leaf.
    pub groups: Vec<Vec<VarId>>,
    pub restarts: usize,
    pub max_group_states: usize,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            significance: 0.01,
            laplace: 0.01,
            min_instances: 10,
            n_clusters: 2,
            seed: 0,
            groups: Vec::new(),
            restarts: 10,
            max_group_states: 1 << 16,
        }
    }
}

/// An atomic unit: one variable or one keep-together group.
#[derive(Debug, Clone)]
struct Unit {
    vars: Vec<VarId>,
    space: WorldSpace,
}

impl Unit {
    /// Joint state of the unit in `row`, if fully observed.
    fn state(&self, data: &Dataset, row: usize) -> Option<usize> {
        let mut w = 0;
        for (&v, &s) in self.vars.iter().zip(self.space.strides()) {
            w += data.cell(row, v)? * s;
        }
        Some(w)
    }
}

struct Learner<'a> {
    data: &'a Dataset,
    params: &'a LearnParams,
    b: CircuitBuilder,
}

pub fn learn_spn(data: &Dataset, params: &LearnParams) -> Result<Circuit, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if !(params.significance > 0.0 && params.significance < 1.0) {
        return Err(LearnError::InvalidParams("significance must lie in (0, 1)".into()));
    }
    if !(params.laplace >= 0.0) {
        return Err(LearnError::InvalidParams("laplace must be non-negative".into()));
    }
    if params.n_clusters < 2 {
        return Err(LearnError::InvalidParams("n_clusters must be at least 2".into()));
    }
    let units = make_units(data.variables(), &params.groups, params.max_group_states)?;
    let mut l = Learner {
        data,
        params,
        b: CircuitBuilder::with_variables(data.variables().to_vec()),
    };
    let rows: Vec<usize> = (0..data.num_rows()).collect();
    let root = l.build(&rows, &units, params.seed);
    Ok(l.b.build(root)?)
}

fn make_units(vars: &[Variable], groups: &[Vec<VarId>], cap: usize) -> Result<Vec<Unit>, LearnError> {
    let mut seen = BTreeSet::new();
    let mut units = Vec::new();
    for g in groups {
        let sorted: BTreeSet<VarId> = g.iter().copied().collect();
        if sorted.is_empty() {
            continue;
        }
        for &v in &sorted {
            if v >= vars.len() {
                return Err(LearnError::InvalidParams(format!("group variable {v} does not exist")));
            }
            if !seen.insert(v) {
                return Err(LearnError::InvalidParams(format!("variable {v} is in two groups")));
            }
        }
        let vs: Vec<VarId> = sorted.into_iter().collect();
        let arities: Vec<usize> = vs.iter().map(|&v| vars[v].arity).collect();
        let space = WorldSpace::new(&arities)
            .filter(|s| s.size() <= cap)
            .ok_or(LearnError::GroupArityOverflow { group: vs.clone(), cap })?;
        units.push(Unit { vars: vs, space });
    }
    for v in vars {
        if !seen.contains(&v.id) {
            units.push(Unit {
                vars: vec![v.id],
                space: WorldSpace::new(&[v.arity]).expect("arity fits"),
            });
        }
    }
    units.sort_by_key(|u| u.vars[0]);
    Ok(units)
}

impl Learner<'_> {
    fn build(&mut self, rows: &[usize], units: &[Unit], seed: u64) -> NodeId {
        if units.len() == 1 {
            return self.leaf(rows, &units[0]);
        }
        if rows.len() < self.params.min_instances.max(2) {
            return self.factorized(rows, units);
        }
        let comps = self.independent_components(rows, units);
        if comps.len() > 1 {
            let children = comps
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let sub: Vec<Unit> = c.iter().map(|&u| units[u].clone()).collect();
                    self.build(rows, &sub, derive_seed(seed, i as u64))
                })
                .collect();
            return self.b.product(children);
        }
        let vars: Vec<VarId> = units.iter().flat_map(|u| u.vars.iter().copied()).collect();
        let Some(clusters) = self.cluster(rows, &vars, seed) else {
            return self.factorized(rows, units);
        };
        let k = clusters.len() as f64;
        let lap = self.params.laplace;
        let n = rows.len() as f64;
        let weights = clusters.iter().map(|c| (c.len() as f64 + lap) / (n + k * lap)).collect();
        let children = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| self.build(c, units, derive_seed(seed, 1000 + i as u64)))
            .collect();
        self.b.sum(children, weights)
    }

    fn factorized(&mut self, rows: &[usize], units: &[Unit]) -> NodeId {
        let leaves = units.iter().map(|u| self.leaf(rows, u)).collect();
        self.b.product(leaves)
    }

    /// Smoothed joint counts over rows where the whole unit is observed.
    fn leaf(&mut self, rows: &[usize], unit: &Unit) -> NodeId {
        let k = unit.space.size();
        let mut counts = vec![0.0; k];
        for &r in rows {
            if let Some(w) = unit.state(self.data, r) {
                counts[w] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let lap = self.params.laplace;
        let denom = total + lap * k as f64;
        let table = if denom > 0.0 {
            counts.iter().map(|c| (c + lap) / denom).collect()
        } else {
            vec![1.0 / k as f64; k]
        };
        self.b.leaf(unit.vars.clone(), table)
    }

    /// Connected components of the pairwise dependency graph.
    fn independent_components(&self, rows: &[usize], units: &[Unit]) -> Vec<Vec<usize>> {
        let n = units.len();
        let states: Vec<Vec<Option<usize>>> = units
            .iter()
            .map(|u| rows.iter().map(|&r| u.state(self.data, r)).collect())
            .collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..n {
            for j in i + 1..n {
                if find(&mut parent, i) == find(&mut parent, j) {
                    continue;
                }
                let p = g_test(&states[i], units[i].space.size(), &states[j], units[j].space.size());
                if p < self.params.significance {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut label = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = comps.len();
                comps.push(Vec::new());
            }
            comps[label[r]].push(i);
        }
        comps
    }

    /// k-modes under Hamming distance on observed cells, best of several
    /// restarts. `None` when no restart yields `n_clusters` non-empty groups.
    fn cluster(&self, rows: &[usize], vars: &[VarId], seed: u64) -> Option<Vec<Vec<usize>>> {
        let k = self.params.n_clusters;
        if rows.len() < k {
            return None;
        }
        let cells: Vec<Vec<Option<usize>>> = rows
            .iter()
            .map(|&r| vars.iter().map(|&v| self.data.cell(r, v)).collect())
            .collect();
        let arities: Vec<usize> = vars.iter().map(|&v| self.data.variables()[v].arity).collect();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for restart in 0..self.params.restarts.max(1) {
            let mut rng = rng_from_seed(derive_seed(seed, restart as u64));
            let (cost, assign) = k_modes(&cells, &arities, k, &mut rng);
            let used: BTreeSet<usize> = assign.iter().copied().collect();
            if used.len() < k {
                continue;
            }
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, assign));
            }
        }
        let (_, assign) = best?;
        let mut groups = vec![Vec::new(); k];
        for (i, &a) in assign.iter().enumerate() {
            groups[a].push(rows[i]);
        }
        Some(groups)
    }
}

fn hamming(row: &[Option<usize>], center: &[usize]) -> usize {
    row.iter()
        .zip(center)
        .filter(|(x, c)| matches!(x, Some(v) if v != *c))
        .count()
}

/// Returns (total distance, assignment).
fn k_modes(cells: &[Vec<Option<usize>>], arities: &[usize], k: usize, rng: &mut Rng) -> (usize, Vec<usize>) {
    let n = cells.len();
    let fill = |row: &[Option<usize>], rng: &mut Rng| -> Vec<usize> {
        row.iter()
            .zip(arities)
            .map(|(x, &a)| x.unwrap_or_else(|| rng.random_range(0..a)))
            .collect()
    };
    let mut centers: Vec<Vec<usize>> = index::sample(rng, n, k)
        .into_iter()
        .map(|i| fill(&cells[i], rng))
        .collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, row) in cells.iter().enumerate() {
            let best = (0..k).min_by_key(|&c| hamming(row, &centers[c])).expect("k >= 1");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // re-seed empty clusters from the point farthest from its center
        for c in 0..k {
            if assign.iter().all(|&a| a != c) {
                let far = (0..n)
                    .max_by_key(|&i| (hamming(&cells[i], &centers[assign[i]]), std::cmp::Reverse(i)))
                    .expect("n >= k");
                centers[c] = fill(&cells[far], rng);
                assign[far] = c;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            for (j, slot) in center.iter_mut().enumerate() {
                let mut counts = vec![0usize; arities[j]];
                for (i, row) in cells.iter().enumerate() {
                    if assign[i] == c {
                        if let Some(v) = row[j] {
                            counts[v] += 1;
                        }
                    }
                }
                // mode; ties keep the current value
                let m = *counts.iter().max().expect("arity >= 2");
                if counts[*slot] < m {
                    *slot = counts.iter().position(|&x| x == m).expect("max exists");
                }
            }
        }
        if !changed {
            break;
        }
    }
    let cost = cells.iter().zip(&assign).map(|(r, &a)| hamming(r, &centers[a])).sum();
    (cost, assign)
}

/// p-value of the G-test of independence on rows where both sides are
/// observed. Degrees of freedom count only levels that occur.
pub fn g_test(a: &[Option<usize>], ka: usize, b: &[Option<usize>], kb: usize) -> f64 {
    let mut table = vec![0.0f64; ka * kb];
    let mut n = 0.0;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            table[x * kb + y] += 1.0;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return 1.0;
    }
    let ra: Vec<f64> = (0..ka).map(|i| (0..kb).map(|j| table[i * kb + j]).sum()).collect();
    let cb: Vec<f64> = (0..kb).map(|j| (0..ka).map(|i| table[i * kb + j]).sum()).collect();
    let df = (ra.iter().filter(|&&x| x > 0.0).count().saturating_sub(1))
        * (cb.iter().filter(|&&x| x > 0.0).count().saturating_sub(1));
    if df == 0 {
        return 1.0;
    }
    let mut g = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let o = table[i * kb + j];
            if o > 0.0 {
                g += o * (o * n / (ra[i] * cb[j])).ln();
            }
        }
    }
    g *= 2.0;
    let chi = ChiSquared::new(df as f64).expect("df > 0");
    1.0 - chi.cdf(g.max(0.0))
}

/// Per-variable available-case distributions.
pub fn empirical_marginals(data: &Dataset) -> Result<Vec<Vec<f64>>, DataError> {
    data.empirical_marginals()
}

/// `x` rounded to 12 significant digits, printed in shortest form.
pub fn format_probability(x: f64) -> String {
    let r: f64 = format!("{x:.11e}").parse().expect("float round-trips");
    format!("{r}")
}

/// One `P(name) = p(name=1)` line per variable.
pub fn marginal_constraint_text(variables: &[Variable], marginals: &[Vec<f64>]) -> String {
    variables
        .iter()
        .zip(marginals)
        .map(|(v, m)| format!("P({}) = {}\n", v.name, format_probability(m[1])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{bucketize, parse_constraints};

    fn coins(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let vars = vec![Variable::binary(0, "a"), Variable::binary(1, "b")];
        let rows = (0..n)
            .map(|_| vec![rng.random_range(0..2), rng.random_range(0..2)])
            .collect();
        Dataset::new(vars, rows).unwrap()
    }

    #[test]
    fn independent_coins_give_a_product_root() {
        let mut products = 0;
        for seed in 0..20 {
            let c = learn_spn(&coins(10_000, seed), &LearnParams { seed, ..Default::default() }).unwrap();
            let root = c.node(c.root());
            if matches!(root, crate::circuit::Node::Product { children } if children.len() == 2
                && children.iter().all(|&ch| c.node(ch).is_leaf()))
            {
                products += 1;
            }
        }
        assert!(products >= 18, "{products}");
    }

    #[test]
    fn grouped_copies_form_one_joint_leaf() {
        let vars = vec![Variable::binary(0, "x1"), Variable::binary(1, "x2")];
        let rows: Vec<Vec<usize>> = (0..100).map(|i| vec![i % 2, i % 2]).collect();
        let d = Dataset::new(vars, rows).unwrap();
        let c = learn_spn(&d, &LearnParams {
            groups: vec![vec![0, 1]],
            laplace: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(c.node(c.root()).is_leaf());
        assert_eq!(c.leaf_table(c.root()).unwrap(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn one_row_falls_back_to_factorized_leaves() {
        let vars = vec![Variable::binary(0, "a"), Variable::binary(1, "b"), Variable::binary(2, "c")];
        let d = Dataset::new(vars, vec![vec![1, 0, 1]]).unwrap();
        let c = learn_spn(&d, &LearnParams::default()).unwrap();
        let children = c.node(c.root()).children().to_vec();
        assert_eq!(children.len(), 3);
        for (v, ch) in children.into_iter().enumerate() {
            let t = c.leaf_table(ch).unwrap();
            let hit = [1, 0, 1][v];
            assert!((t[hit] - 1.01 / 1.02).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_data_is_rejected() {
        let d = Dataset::new(vec![Variable::binary(0, "a")], vec![]).unwrap();
        assert!(matches!(learn_spn(&d, &LearnParams::default()), Err(LearnError::EmptyDataset)));
    }

    #[test]
    fn forced_single_leaf_without_smoothing_is_the_empirical_joint() {
        let d = coins(37, 5);
        let c = learn_spn(&d, &LearnParams {
            groups: vec![vec![0, 1]],
            laplace: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut counts = [0.0; 4];
        for r in 0..37 {
            counts[d.cell(r, 0).unwrap() + 2 * d.cell(r, 1).unwrap()] += 1.0;
        }
        let t = c.leaf_table(c.root()).unwrap();
        for w in 0..4 {
            assert_eq!(t[w], counts[w] / 37.0);
        }
    }

    #[test]
    fn g_test_flags_dependence() {
        let a: Vec<Option<usize>> = (0..200).map(|i| Some(i % 2)).collect();
        assert!(g_test(&a, 2, &a, 2) < 1e-10);
        let b: Vec<Option<usize>> = (0..200).map(|i| Some((i / 2) % 2)).collect();
        assert!(g_test(&a, 2, &b, 2) > 0.5);
        let constant = vec![Some(0); 200];
        assert_eq!(g_test(&a, 2, &constant, 2), 1.0);
    }

    #[test]
    fn marginal_text() {
        let vars = vec![Variable::binary(0, "x0")];
        assert_eq!(marginal_constraint_text(&vars, &[vec![0.25, 0.75]]), "P(x0) = 0.75\n");
        assert_eq!(format_probability(1.0 / 3.0), "0.333333333333");
    }

    #[test]
    fn marginal_text_round_trips_through_the_parser() {
        let vars: Vec<Variable> = (0..16).map(|i| Variable::binary(i, format!("v{i}"))).collect();
        let mut rng = rng_from_seed(1);
        let rows = (0..60)
            .map(|_| (0..16).map(|_| rng.random_range(0..2)).collect())
            .collect();
        let d = Dataset::new(vars.clone(), rows).unwrap();
        let m = empirical_marginals(&d).unwrap();
        let text = marginal_constraint_text(&vars, &m);
        let cs = parse_constraints(&text, &vars).unwrap();
        assert_eq!(cs.len(), 32);
        for pair in cs.chunks(2) {
            let v = *pair[0].vars().first().unwrap();
            let want = format_probability(m[v][1]).parse::<f64>().unwrap();
            assert_eq!(pair[0].bound, want);
            assert!(pair[1].negated);
        }
        let b = bucketize(&cs);
        assert_eq!(b.len(), 16);
        assert!(b.iter().all(|b| b.scope.len() == 1));
    }

    #[test]
    fn counting_oracle_for_marginals() {
        let d = coins(500, 8);
        let m = empirical_marginals(&d).unwrap();
        for v in 0..2 {
            let ones = (0..500).filter(|&r| d.cell(r, v) == Some(1)).count();
            assert_eq!(m[v][1], ones as f64 / 500.0);
        }
    }
}
