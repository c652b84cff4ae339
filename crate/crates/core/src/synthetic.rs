//! Random circuits, feasible constraint sets and synthetic datasets for
//! tests, benchmarks and experiments.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::circuit::{Circuit, CircuitBuilder, Node, NodeId, VarId, Variable};
use crate::data::Dataset;
use crate::logic::{Formula, LinearConstraint, Relation, Statement, Term};
use crate::rng::{rng_from_seed, Rng};
use crate::world::WorldSpace;

/// Shape of a random circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitShape {
    pub n_vars: usize,
    /// Variable sets kept inside one subcircuit (future buckets).
    pub groups: Vec<Vec<VarId>>,
    /// Levels of alternating sum/product structure above the units.
    pub depth: usize,
    pub max_sum_children: usize,
    /// Probability that a group is modeled by a small sum of products of
    /// univariate leaves instead of one joint leaf.
    pub factorize_groups: f64,
    /// Exponent applied to uniform draws before normalizing; larger values
    /// give peakier tables.
    pub sharpness: f64,
}

impl CircuitShape {
    pub fn binary(n_vars: usize) -> Self {
        Self {
            n_vars,
            groups: Vec::new(),
            depth: 2,
            max_sum_children: 3,
            factorize_groups: 0.0,
            sharpness: 1.0,
        }
    }
}

/// Normalized random vector; `sharpness` 1 gives a flat Dirichlet.
pub fn random_distribution(rng: &mut Rng, n: usize, sharpness: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(1e-3..1.0);
            (-u.ln()).powf(sharpness)
        })
        .collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

struct Gen<'a> {
    rng: &'a mut Rng,
    b: CircuitBuilder,
    shape: &'a CircuitShape,
}

impl Gen<'_> {
    fn unit(&mut self, vars: &[VarId]) -> NodeId {
        let k = 1usize << vars.len();
        if vars.len() > 1 && self.rng.random_bool(self.shape.factorize_groups) {
            let n = self.rng.random_range(1..=2);
            let children: Vec<NodeId> = (0..n)
                .map(|_| {
                    let leaves = vars
                        .iter()
                        .map(|&v| {
                            let t = random_distribution(self.rng, 2, self.shape.sharpness);
                            self.b.leaf(vec![v], t)
                        })
                        .collect();
                    self.b.product(leaves)
                })
                .collect();
            if children.len() == 1 {
                return children[0];
            }
            let w = random_distribution(self.rng, children.len(), 1.0);
            return self.b.sum(children, w);
        }
        let t = random_distribution(self.rng, k, self.shape.sharpness);
        self.b.leaf(vars.to_vec(), t)
    }

    fn node(&mut self, units: &[Vec<VarId>], depth: usize, want_sum: bool) -> NodeId {
        if units.len() == 1 && (depth == 0 || !want_sum) {
            return self.unit(&units[0]);
        }
        if depth == 0 {
            let children = units.iter().map(|u| self.unit(u)).collect();
            return self.b.product(children);
        }
        if want_sum {
            let k = self.rng.random_range(2..=self.shape.max_sum_children.max(2));
            let children = (0..k).map(|_| self.node(units, depth - 1, false)).collect();
            let w = random_distribution(self.rng, k, 1.0);
            return self.b.sum(children, w);
        }
        // product over a random partition into 2..=3 blocks
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(self.rng);
        let blocks = self.rng.random_range(2..=3.min(units.len()));
        let mut parts: Vec<Vec<Vec<VarId>>> = vec![Vec::new(); blocks];
        for (i, &u) in order.iter().enumerate() {
            let slot = if i < blocks { i } else { self.rng.random_range(0..blocks) };
            parts[slot].push(units[u].clone());
        }
        let children = parts.iter().map(|p| self.node(p, depth - 1, true)).collect();
        self.b.product(children)
    }
}

/// Smooth, decomposable, normalized circuit over binary variables `x0..`.
pub fn random_circuit(rng: &mut Rng, shape: &CircuitShape) -> Circuit {
    let mut in_group = vec![false; shape.n_vars];
    let mut units: Vec<Vec<VarId>> = Vec::new();
    for g in &shape.groups {
        let mut g = g.clone();
        g.sort_unstable();
        g.dedup();
        for &v in &g {
            assert!(v < shape.n_vars && !in_group[v], "groups must be disjoint variable ids");
            in_group[v] = true;
        }
        if !g.is_empty() {
            units.push(g);
        }
    }
    units.extend((0..shape.n_vars).filter(|&v| !in_group[v]).map(|v| vec![v]));
    units.sort();
    let mut g = Gen {
        rng,
        b: CircuitBuilder::with_binary_variables(shape.n_vars),
        shape,
    };
    let root = g.node(&units, shape.depth, true);
    g.b.build(root).expect("generator builds valid circuits")
}

/// Disjoint random variable sets of the given sizes.
pub fn random_groups(rng: &mut Rng, n_vars: usize, sizes: &[usize]) -> Vec<Vec<VarId>> {
    let mut vars: Vec<VarId> = (0..n_vars).collect();
    vars.shuffle(rng);
    let mut out = Vec::new();
    let mut at = 0;
    for &s in sizes {
        let mut g = vars[at..at + s].to_vec();
        g.sort_unstable();
        out.push(g);
        at += s;
    }
    out
}

fn random_formula(rng: &mut Rng, vars: &[VarId]) -> Formula {
    let lit = |rng: &mut Rng, v: VarId| {
        if rng.random_bool(0.3) {
            Formula::not(Formula::var(v))
        } else {
            Formula::var(v)
        }
    };
    let mut pick: Vec<VarId> = vars.to_vec();
    pick.shuffle(rng);
    let n = rng.random_range(1..=vars.len());
    let lits: Vec<Formula> = pick[..n].iter().map(|&v| lit(rng, v)).collect();
    if lits.len() == 1 {
        return lits.into_iter().next().expect("one literal");
    }
    if rng.random_bool(0.5) {
        Formula::And(lits)
    } else {
        Formula::Or(lits)
    }
}

fn prob_under(f: &Formula, scope: &[VarId], space: &WorldSpace, r: &[f64]) -> f64 {
    let mut digits = vec![0; scope.len()];
    (0..space.size())
        .filter(|&w| {
            space.decode_into(w, &mut digits);
            f.eval(&|v| digits[scope.iter().position(|&s| s == v).expect("in scope")])
        })
        .map(|w| r[w])
        .sum()
}

/// Statements over one bucket, all satisfied by a random distribution over
/// the bucket worlds. The first statement mentions every bucket variable so
/// the bucket stays connected.
pub fn random_feasible_statements(rng: &mut Rng, scope: &[VarId], count: usize) -> Vec<Statement> {
    let r = random_distribution(rng, 1 << scope.len(), 1.0);
    statements_satisfied_by(rng, scope, &r, count)
}

/// As [`random_feasible_statements`], for a given distribution `r` over
/// the bucket worlds of binary `scope`.
pub fn statements_satisfied_by(rng: &mut Rng, scope: &[VarId], r: &[f64], count: usize) -> Vec<Statement> {
    let space = WorldSpace::new(&vec![2; scope.len()]).expect("small bucket");
    assert_eq!(r.len(), space.size());
    (0..count)
        .map(|i| {
            let n_terms = rng.random_range(1..=2);
            let mut terms: Vec<Term> = (0..n_terms)
                .map(|_| Term {
                    coeff: [1.0, 1.0, -1.0, 0.5, 2.0][rng.random_range(0..5)],
                    formula: random_formula(rng, scope),
                })
                .collect();
            if i == 0 {
                let lits = scope.iter().map(|&v| Formula::var(v)).collect::<Vec<_>>();
                terms[0].formula = if lits.len() == 1 {
                    lits[0].clone()
                } else {
                    Formula::And(lits)
                };
            }
            let value: f64 = terms
                .iter()
                .map(|t| t.coeff * prob_under(&t.formula, scope, &space, r))
                .sum();
            let slack = rng.random_range(0.0..0.05);
            let (relation, bound) = match rng.random_range(0..3) {
                0 => (Relation::Le, value + slack),
                1 => (Relation::Ge, value - slack),
                _ => (Relation::Eq, value),
            };
            Statement {
                terms,
                relation,
                bound,
                line: i + 1,
            }
        })
        .collect()
}

/// `<=` rows of all statements, numbered in order.
pub fn normalize_all(statements: &[Statement]) -> Vec<LinearConstraint> {
    statements.iter().enumerate().flat_map(|(i, s)| s.normalize(i)).collect()
}

/// Renders statements in the constraint language.
pub fn statements_text(statements: &[Statement], variables: &[Variable]) -> String {
    statements
        .iter()
        .map(|s| format!("{}\n", s.display(variables)))
        .collect()
}

/// Copy of `circuit` with every leaf whose scope is one of `scopes`
/// replaced by a mixture with a fresh random table.
pub fn perturb_leaves(circuit: &Circuit, scopes: &[Vec<VarId>], rng: &mut Rng, strength: f64) -> Circuit {
    let mut out = circuit.clone();
    for id in circuit.leaves() {
        if let Node::Leaf { scope, table } = circuit.node(id) {
            if scopes.iter().any(|s| s == scope) {
                let noise = random_distribution(rng, table.len(), 1.0);
                let t = table
                    .iter()
                    .zip(&noise)
                    .map(|(a, b)| (1.0 - strength) * a + strength * b)
                    .collect();
                out.set_leaf_table(id, t).expect("same length");
            }
        }
    }
    out
}

/// Fixed 10-variable model used as ground truth by the scarce-data and
/// missing-data experiments.
pub fn ground_truth_circuit() -> Circuit {
    let mut rng = rng_from_seed(0x5eed_0010);
    random_circuit(&mut rng, &CircuitShape {
        n_vars: 10,
        groups: Vec::new(),
        depth: 4,
        max_sum_children: 3,
        factorize_groups: 0.0,
        sharpness: 2.0,
    })
}

/// `n` rows drawn from `circuit`.
pub fn sample_dataset(circuit: &Circuit, n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let rows = (0..n).map(|_| circuit.sample(&mut rng)).collect();
    Dataset::new(circuit.variables().to_vec(), rows).expect("samples are in range")
}

pub const ADULT_TARGET: &str = "income_high";
pub const ADULT_PROTECTED: &str = "sex_male";

const ADULT_NAMES: [&str; 13] = [
    "age_mid",
    "workclass_private",
    "education_high",
    "married",
    "occupation_prof",
    "relationship_husband",
    "race_white",
    "sex_male",
    "capital_gain",
    "capital_loss",
    "hours_over40",
    "native_us",
    "income_high",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binarized census-like table: 13 variables, income depends on sex both
/// directly and through marriage and hours.
pub fn adult_like(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let vars: Vec<Variable> = ADULT_NAMES
        .iter()
        .enumerate()
        .map(|(i, s)| Variable::binary(i, *s))
        .collect();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = |p: f64| usize::from(rng.random_bool(p.clamp(0.0, 1.0)));
        let male = b(0.67);
        let white = b(0.85);
        let native = b(if white == 1 { 0.92 } else { 0.78 });
        let age = b(0.75);
        let edu = b(sigmoid(-0.8 + 0.3 * white as f64 + 0.3 * native as f64));
        let married = b(sigmoid(-0.6 + 1.2 * age as f64 + 0.8 * male as f64));
        let husband = b(sigmoid(-3.0 + 5.0 * (married * male) as f64));
        let private = b(sigmoid(0.9 - 0.4 * edu as f64));
        let prof = b(sigmoid(-1.3 + 1.8 * edu as f64 + 0.2 * male as f64));
        let hours = b(sigmoid(-1.0 + 0.9 * male as f64 + 0.3 * married as f64));
        let gain = b(sigmoid(-2.6 + 0.8 * edu as f64 + 0.5 * age as f64));
        let loss = b(sigmoid(-3.0 + 0.4 * edu as f64));
        let income = b(sigmoid(
            -3.4 + 1.2 * edu as f64
                + 1.1 * married as f64
                + 0.9 * prof as f64
                + 0.6 * hours as f64
                + 1.4 * gain as f64
                + 0.4 * age as f64
                + 0.5 * male as f64
                + 0.3 * white as f64,
        ));
        rows.push(vec![
            age, private, edu, married, prof, husband, white, male, gain, loss, hours, native, income,
        ]);
    }
    Dataset::new(vars, rows).expect("binary values")
}
