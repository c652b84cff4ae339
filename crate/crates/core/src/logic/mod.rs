//! Linear probabilistic constraints over propositional formulas.
//!
//! A constraint reads `sum_i tau_i * P(F_i) <= alpha`. Text is parsed by
//! [`parse_constraints`]; `=` and `>=` are normalized into `<=` rows.

mod bucket;
mod parser;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::circuit::{VarId, Variable};

pub use bucket::{
    bucketize, compile_bucket, compile_indicator, feasibility_check, Bucket, BucketCaps, CompiledBucket, Feasibility,
    WorldIndicator,
};
pub use parser::{parse_constraints, parse_formula, parse_statements};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unknown variable `{name}` at line {line}")]
    UnknownVariable { name: String, line: usize },
    #[error("variable `{name}` has arity {arity}; formulas need Boolean variables")]
    NonBooleanVariable { name: String, arity: usize },
    #[error("formula mentions variable {var} outside the bucket scope")]
    ScopeMismatch { var: VarId },
    #[error("bucket over {vars} variables ({worlds} worlds) exceeds the cap of {max_vars} variables / {max_worlds} worlds")]
    BucketTooLarge {
        vars: usize,
        worlds: u128,
        max_vars: usize,
        max_worlds: usize,
    },
    #[error("linear program failed: {0}")]
    Lp(#[from] crate::lp::LpError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Var(VarId),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn var(id: VarId) -> Self {
        Formula::Var(id)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    /// Truth under `value(var)`; a variable is true when its value is 1.
    pub fn eval(&self, value: &impl Fn(VarId) -> usize) -> bool {
        match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Var(v) => value(*v) == 1,
            Formula::Not(f) => !f.eval(value),
            Formula::And(fs) => fs.iter().all(|f| f.eval(value)),
            Formula::Or(fs) => fs.iter().any(|f| f.eval(value)),
        }
    }

    pub fn vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Var(v) => {
                out.insert(*v);
            }
            Formula::Not(f) => f.collect_vars(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_vars(out)),
        }
    }

    pub fn display<'a>(&'a self, variables: &'a [Variable]) -> FormulaDisplay<'a> {
        FormulaDisplay { formula: self, variables }
    }
}

pub struct FormulaDisplay<'a> {
    formula: &'a Formula,
    variables: &'a [Variable],
}

impl FormulaDisplay<'_> {
    fn write(&self, f: &mut fmt::Formatter<'_>, node: &Formula) -> fmt::Result {
        match node {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Var(v) => match self.variables.get(*v) {
                Some(var) => write!(f, "{}", var.name),
                None => write!(f, "?{v}"),
            },
            Formula::Not(inner) => {
                write!(f, "~")?;
                self.write_atom(f, inner)
            }
            Formula::And(fs) => {
                for (i, c) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    self.write_atom(f, c)?;
                }
                Ok(())
            }
            Formula::Or(fs) => {
                for (i, c) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    match c {
                        Formula::Or(_) => self.write_parens(f, c)?,
                        _ => self.write(f, c)?,
                    }
                }
                Ok(())
            }
        }
    }

    fn write_atom(&self, f: &mut fmt::Formatter<'_>, node: &Formula) -> fmt::Result {
        match node {
            Formula::And(_) | Formula::Or(_) => self.write_parens(f, node),
            _ => self.write(f, node),
        }
    }

    fn write_parens(&self, f: &mut fmt::Formatter<'_>, node: &Formula) -> fmt::Result {
        write!(f, "(")?;
        self.write(f, node)?;
        write!(f, ")")
    }
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.formula)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub formula: Formula,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

/// A constraint as written, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub terms: Vec<Term>,
    pub relation: Relation,
    pub bound: f64,
    pub line: usize,
}

impl Statement {
    /// `<=` rows: one for `<=` and `>=`, two for `=`.
    pub fn normalize(&self, statement_index: usize) -> Vec<LinearConstraint> {
        let forward = LinearConstraint {
            terms: self.terms.clone(),
            bound: self.bound,
            source: statement_index,
            negated: false,
        };
        let backward = LinearConstraint {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coeff: -t.coeff,
                    formula: t.formula.clone(),
                })
                .collect(),
            bound: -self.bound,
            source: statement_index,
            negated: true,
        };
        match self.relation {
            Relation::Le => vec![forward],
            Relation::Ge => vec![backward],
            Relation::Eq => vec![forward, backward],
        }
    }

    pub fn display<'a>(&'a self, variables: &'a [Variable]) -> impl fmt::Display + 'a {
        ConstraintDisplay {
            terms: &self.terms,
            relation: self.relation,
            bound: self.bound,
            variables,
        }
    }
}

/// `sum tau_i P(F_i) <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<Term>,
    pub bound: f64,
    /// Index of the originating statement; the two halves of `=` share it.
    pub source: usize,
    /// True if this row is the sign-flipped form of the statement.
    pub negated: bool,
}

impl LinearConstraint {
    pub fn le(terms: Vec<Term>, bound: f64) -> Self {
        Self {
            terms,
            bound,
            source: 0,
            negated: false,
        }
    }

    pub fn vars(&self) -> BTreeSet<VarId> {
        self.terms.iter().flat_map(|t| t.formula.vars()).collect()
    }

    pub fn display<'a>(&'a self, variables: &'a [Variable]) -> impl fmt::Display + 'a {
        ConstraintDisplay {
            terms: &self.terms,
            relation: Relation::Le,
            bound: self.bound,
            variables,
        }
    }
}

struct ConstraintDisplay<'a> {
    terms: &'a [Term],
    relation: Relation,
    bound: f64,
    variables: &'a [Variable],
}

impl fmt::Display for ConstraintDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            let negative = t.coeff.is_sign_negative();
            match (i, negative) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            let magnitude = t.coeff.abs();
            if magnitude != 1.0 {
                write!(f, "{magnitude}*")?;
            }
            write!(f, "P({})", t.formula.display(self.variables))?;
        }
        write!(f, " {} {}", self.relation.symbol(), self.bound)
    }
}

/// Prints constraints one per line in a form accepted by [`parse_constraints`].
pub fn print_constraints(constraints: &[LinearConstraint], variables: &[Variable]) -> String {
    constraints
        .iter()
        .map(|c| format!("{}\n", c.display(variables)))
        .collect()
}
