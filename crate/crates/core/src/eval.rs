//! Model metrics and statistical-parity enforcement.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::circuit::{Circuit, CircuitError, VarId};
use crate::data::{DataError, Dataset};
use crate::enforce::{enforce_constraints, EnforceError, EnforceOptions, EnforcementReport};
use crate::logic::{Formula, LinearConstraint, Relation, Statement, Term};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset has {data} variables, circuit has {circuit}")]
    VariableMismatch { data: usize, circuit: usize },
    #[error("variable {0} must be binary")]
    NotBinary(VarId),
    #[error("target and protected attribute must differ")]
    SameVariable,
    #[error("p(protected = {value}) is {mass}; parity is undefined")]
    DegenerateProtectedMarginal { value: usize, mass: f64 },
    #[error("no grid point admitted a solution")]
    NoFeasibleBeta,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Enforce(#[from] EnforceError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::VariableMismatch { .. } => "STRUCTURE_MISMATCH",
            EvalError::NotBinary(_) => "NON_BOOLEAN_VARIABLE",
            EvalError::SameVariable => "INVALID_ARGUMENT",
            EvalError::DegenerateProtectedMarginal { .. } => "DEGENERATE_PROTECTED_MARGINAL",
            EvalError::NoFeasibleBeta => "NO_FEASIBLE_BETA",
            EvalError::Data(e) => e.code(),
            EvalError::Circuit(_) => "INVALID_CIRCUIT",
            EvalError::Enforce(e) => e.code(),
        }
    }
}

fn check_shape(circuit: &Circuit, data: &Dataset) -> Result<(), EvalError> {
    let ok = circuit.num_variables() == data.num_variables()
        && circuit
            .variables()
            .iter()
            .zip(data.variables())
            .all(|(a, b)| a.arity == b.arity);
    if ok {
        Ok(())
    } else {
        Err(EvalError::VariableMismatch {
            data: data.num_variables(),
            circuit: circuit.num_variables(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLikelihood {
    /// Mean over rows with positive probability.
    pub mean: f64,
    pub rows: usize,
    /// Rows the model assigns probability zero; excluded from `mean`.
    pub zero_probability_rows: Vec<usize>,
}

/// Average log-probability of each row's observed cells.
pub fn avg_log_likelihood(circuit: &Circuit, data: &Dataset) -> Result<LogLikelihood, EvalError> {
    check_shape(circuit, data)?;
    let lls: Vec<f64> = (0..data.num_rows())
        .into_par_iter()
        .map(|r| circuit.log_evaluate_dense(&data.row(r)))
        .collect();
    let zero: Vec<usize> = (0..lls.len()).filter(|&r| lls[r] == f64::NEG_INFINITY).collect();
    let finite: Vec<f64> = lls.into_iter().filter(|x| x.is_finite()).collect();
    let mean = if finite.is_empty() {
        f64::NEG_INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(LogLikelihood {
        mean,
        rows: data.num_rows(),
        zero_probability_rows: zero,
    })
}

/// `p(X_i = 1)` for every variable.
pub fn model_marginals(circuit: &Circuit) -> Vec<f64> {
    let n = circuit.num_variables();
    (0..n)
        .into_par_iter()
        .map(|v| {
            let mut e = vec![None; n];
            e[v] = Some(1);
            circuit.evaluate_dense(&e)
        })
        .collect()
}

/// `sum_i (p(X_i = 1) - target_i)^2`.
pub fn marginal_quadratic_error_to(circuit: &Circuit, targets: &[f64]) -> f64 {
    model_marginals(circuit)
        .iter()
        .zip(targets)
        .map(|(m, t)| (m - t).powi(2))
        .sum()
}

/// Quadratic error against the data's available-case marginals.
pub fn marginal_quadratic_error(circuit: &Circuit, data: &Dataset) -> Result<f64, EvalError> {
    check_shape(circuit, data)?;
    let emp: Vec<f64> = data.empirical_marginals()?.into_iter().map(|m| m[1]).collect();
    Ok(marginal_quadratic_error_to(circuit, &emp))
}

/// Argmax of the target given every other observed cell, per row; `None`
/// where the target itself is missing.
pub fn predictions(circuit: &Circuit, data: &Dataset, target: VarId) -> Result<Vec<Option<usize>>, EvalError> {
    check_shape(circuit, data)?;
    Ok((0..data.num_rows())
        .into_par_iter()
        .map(|r| {
            data.cell(r, target)?;
            let mut e = data.row(r);
            e[target] = None;
            Some(circuit.argmax_dense(target, &mut e))
        })
        .collect())
}

/// Fraction of rows (with an observed target) predicted correctly.
pub fn accuracy(circuit: &Circuit, data: &Dataset, target: VarId) -> Result<f64, EvalError> {
    let pred = predictions(circuit, data, target)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (r, p) in pred.iter().enumerate() {
        if let Some(p) = p {
            n += 1;
            hit += usize::from(Some(*p) == data.cell(r, target));
        }
    }
    Ok(if n == 0 { f64::NAN } else { hit as f64 / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BetaSelection {
    /// Smallest enforcement excess; ties go to the beta nearest p(y=1).
    MinExcess,
    /// Highest mean log-likelihood on a validation set.
    ValidationLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessSpec {
    pub target: VarId,
    pub protected: VarId,
    /// Number of evenly spaced beta values on [0, 1].
    pub grid: usize,
    pub selection: BetaSelection,
}

impl FairnessSpec {
    pub fn new(target: VarId, protected: VarId) -> Self {
        Self {
            target,
            protected,
            grid: 101,
            selection: BetaSelection::MinExcess,
        }
    }

    fn check(&self, circuit: &Circuit) -> Result<(), EvalError> {
        if self.target == self.protected {
            return Err(EvalError::SameVariable);
        }
        for v in [self.target, self.protected] {
            if v >= circuit.num_variables() {
                return Err(CircuitError::InvalidEvidence(format!("unknown variable {v}")).into());
            }
            if circuit.arity(v) != 2 {
                return Err(EvalError::NotBinary(v));
            }
        }
        Ok(())
    }
}

fn prob(circuit: &Circuit, assignment: &[(VarId, usize)]) -> f64 {
    let mut e = vec![None; circuit.num_variables()];
    for &(v, x) in assignment {
        e[v] = Some(x);
    }
    circuit.evaluate_dense(&e)
}

/// `p(y=1 | x'=1) - p(y=1 | x'=0)`.
pub fn statistical_parity(circuit: &Circuit, spec: &FairnessSpec) -> Result<f64, EvalError> {
    spec.check(circuit)?;
    let (y, x) = (spec.target, spec.protected);
    let mut cond = [0.0; 2];
    for (g, c) in cond.iter_mut().enumerate() {
        let px = prob(circuit, &[(x, g)]);
        if px <= 0.0 {
            return Err(EvalError::DegenerateProtectedMarginal { value: g, mass: px });
        }
        *c = prob(circuit, &[(y, 1), (x, g)]) / px;
    }
    Ok(cond[1] - cond[0])
}

/// `p(y ∧ x'=g) - beta p(x'=g) = 0` for g = 1 and g = 0, as four `<=` rows.
pub fn parity_constraints(spec: &FairnessSpec, beta: f64) -> Vec<LinearConstraint> {
    let (y, x) = (Formula::var(spec.target), Formula::var(spec.protected));
    [x.clone(), Formula::not(x)]
        .into_iter()
        .enumerate()
        .flat_map(|(i, group)| {
            Statement {
                terms: vec![
                    Term {
                        coeff: 1.0,
                        formula: Formula::And(vec![y.clone(), group.clone()]),
                    },
                    Term {
                        coeff: -beta,
                        formula: group,
                    },
                ],
                relation: Relation::Eq,
                bound: 0.0,
                line: i + 1,
            }
            .normalize(i)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaCandidate {
    pub beta: f64,
    /// `None` when enforcement failed at this beta.
    pub excess: Option<f64>,
    pub validation_ll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ParityOutcome {
    pub circuit: Circuit,
    pub beta: f64,
    pub report: EnforcementReport,
    pub candidates: Vec<BetaCandidate>,
}

/// Grid search over beta; see [`BetaSelection`]. `validation` is required
/// for [`BetaSelection::ValidationLikelihood`].
pub fn enforce_parity(
    circuit: &Circuit,
    spec: &FairnessSpec,
    opts: &EnforceOptions,
    validation: Option<&Dataset>,
) -> Result<ParityOutcome, EvalError> {
    spec.check(circuit)?;
    for g in 0..2 {
        let px = prob(circuit, &[(spec.protected, g)]);
        if px <= 0.0 {
            return Err(EvalError::DegenerateProtectedMarginal { value: g, mass: px });
        }
    }
    if spec.selection == BetaSelection::ValidationLikelihood && validation.is_none() {
        return Err(DataError::Invalid("validation-likelihood selection needs a validation set".into()).into());
    }
    let k = spec.grid.max(2);
    let betas: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    let runs: Vec<Result<(Circuit, EnforcementReport), EnforceError>> = betas
        .par_iter()
        .map(|&b| enforce_constraints(circuit, &parity_constraints(spec, b), opts))
        .collect();

    // Scoping problems do not depend on beta; surface them as such.
    if let Some(Err(e @ EnforceError::ScopingViolation { .. })) = runs.iter().find(|r| r.is_err()) {
        if runs.iter().all(Result::is_err) {
            return Err(e.clone().into());
        }
    }
    let mut candidates = Vec::with_capacity(k);
    for (&beta, run) in betas.iter().zip(&runs) {
        candidates.push(match run {
            Ok((c, rep)) => BetaCandidate {
                beta,
                excess: Some(rep.total_excess),
                validation_ll: match validation {
                    Some(v) if spec.selection == BetaSelection::ValidationLikelihood => {
                        Some(avg_log_likelihood(c, v)?.mean)
                    }
                    _ => None,
                },
                error: None,
            },
            Err(e) => BetaCandidate {
                beta,
                excess: None,
                validation_ll: None,
                error: Some(e.to_string()),
            },
        });
    }
    let p_y = prob(circuit, &[(spec.target, 1)]);
    let score = |c: &BetaCandidate| match spec.selection {
        BetaSelection::MinExcess => c.excess,
        BetaSelection::ValidationLikelihood => c.validation_ll.map(|x| -x),
    };
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some(s) = score(c) else { continue };
        let better = match best {
            None => true,
            Some(j) => {
                let t = score(&candidates[j]).expect("scored");
                let slack = 1e-12 * (1.0 + s.abs().max(t.abs()));
                s < t - slack || (s <= t + slack && (c.beta - p_y).abs() < (candidates[j].beta - p_y).abs())
            }
        };
        if better {
            best = Some(i);
        }
    }
    let best = best.ok_or(EvalError::NoFeasibleBeta)?;
    let (circuit, report) = runs.into_iter().nth(best).expect("index").expect("scored runs succeeded");
    Ok(ParityOutcome {
        circuit,
        beta: betas[best],
        report,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRates {
    /// Indexed by protected value.
    pub tpr: [f64; 2],
    pub tnr: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub per_group: GroupRates,
    /// `|ΔTPR| + |ΔTNR|` across protected groups.
    pub equalized_odds: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Report-only metrics from the argmax predictor.
pub fn classification_report(circuit: &Circuit, data: &Dataset, spec: &FairnessSpec) -> Result<ClassificationReport, EvalError> {
    spec.check(circuit)?;
    let pred = predictions(circuit, data, spec.target)?;
    // counts[g][y][pred]
    let mut counts = [[[0usize; 2]; 2]; 2];
    let mut all = [[0usize; 2]; 2];
    for (r, p) in pred.iter().enumerate() {
        let (Some(p), Some(y)) = (*p, data.cell(r, spec.target)) else {
            continue;
        };
        all[y][p] += 1;
        if let Some(g) = data.cell(r, spec.protected) {
            counts[g][y][p] += 1;
        }
    }
    let tpr = |c: &[[usize; 2]; 2]| ratio(c[1][1], c[1][0] + c[1][1]);
    let tnr = |c: &[[usize; 2]; 2]| ratio(c[0][0], c[0][0] + c[0][1]);
    let per_group = GroupRates {
        tpr: [tpr(&counts[0]), tpr(&counts[1])],
        tnr: [tnr(&counts[0]), tnr(&counts[1])],
    };
    let total: usize = all.iter().flatten().sum();
    Ok(ClassificationReport {
        accuracy: ratio(all[0][0] + all[1][1], total),
        balanced_accuracy: 0.5 * (tpr(&all) + tnr(&all)),
        equalized_odds: (per_group.tpr[1] - per_group.tpr[0]).abs() + (per_group.tnr[1] - per_group.tnr[0]).abs(),
        per_group,
    })
}

/// The metrics document written by the command line tool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub test_ll: f64,
    pub zero_probability_rows: usize,
    pub marginal_qerr: f64,
    pub accuracy: Option<f64>,
    pub statistical_parity: Option<f64>,
    pub per_group: Option<GroupRates>,
    pub balanced_accuracy: Option<f64>,
    pub equalized_odds: Option<f64>,
    pub beta: Option<f64>,
}

impl Metrics {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Log-likelihood and marginal error, plus classification and parity when
/// a fairness spec is given.
pub fn compute_metrics(circuit: &Circuit, data: &Dataset, fairness: Option<&FairnessSpec>, beta: Option<f64>) -> Result<Metrics, EvalError> {
    let ll = avg_log_likelihood(circuit, data)?;
    let mut m = Metrics {
        test_ll: ll.mean,
        zero_probability_rows: ll.zero_probability_rows.len(),
        marginal_qerr: marginal_quadratic_error(circuit, data)?,
        accuracy: None,
        statistical_parity: None,
        per_group: None,
        balanced_accuracy: None,
        equalized_odds: None,
        beta,
    };
    if let Some(spec) = fairness {
        let c = classification_report(circuit, data, spec)?;
        m.accuracy = Some(c.accuracy);
        m.statistical_parity = Some(statistical_parity(circuit, spec)?);
        m.balanced_accuracy = Some(c.balanced_accuracy);
        m.equalized_odds = Some(c.equalized_odds);
        m.per_group = Some(c.per_group);
    }
    Ok(m)
}
