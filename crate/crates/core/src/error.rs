//! One error type over every module, with stable machine-readable codes.

use thiserror::Error;

use crate::circuit::CircuitError;
use crate::data::DataError;
use crate::enforce::EnforceError;
use crate::eval::EvalError;
use crate::experiment::ExperimentError;
use crate::learn::LearnError;
use crate::logic::LogicError;
use crate::oracle::OracleError;
use crate::solver::SolverError;
use crate::transform::TransformError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Enforce(#[from] EnforceError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Circuit(CircuitError::CycleDetected(_)) => "CYCLE_DETECTED",
            Error::Circuit(CircuitError::DanglingChild { .. }) => "DANGLING_CHILD",
            Error::Circuit(CircuitError::InvalidEvidence(_)) => "INVALID_EVIDENCE",
            Error::Circuit(CircuitError::ScopeNotPresent(_)) => "SCOPE_NOT_PRESENT",
            Error::Circuit(_) => "INVALID_CIRCUIT",
            Error::Logic(e) => EnforceError::from(e.clone()).code(),
            Error::Transform(TransformError::NotMergeable { .. }) => "SCOPING_VIOLATION",
            Error::Transform(TransformError::TooLarge { .. }) => "BUCKET_TOO_LARGE",
            Error::Transform(_) => "INVALID_CIRCUIT",
            Error::Solver(SolverError::Infeasible) => "INFEASIBLE",
            Error::Solver(SolverError::ScopingViolation { .. }) => "SCOPING_VIOLATION",
            Error::Solver(_) => "SOLVER_FAILURE",
            Error::Enforce(e) => e.code(),
            Error::Learn(e) => e.code(),
            Error::Data(e) => e.code(),
            Error::Eval(e) => e.code(),
            Error::Oracle(OracleError::TooLarge { .. } | OracleError::TooManyComponents { .. }) => "TOO_LARGE_TO_ENUMERATE",
            Error::Oracle(_) => "ORACLE_FAILURE",
            Error::Experiment(e) => e.code(),
        }
    }
}
