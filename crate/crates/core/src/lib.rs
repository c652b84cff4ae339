//! Enforcing linear probabilistic logic constraints on probabilistic
//! circuits.
//!
//! Constraints `sum_i tau_i P(F_i) <= alpha` are grouped into buckets of
//! shared variables. For each bucket a small convex program over the
//! bucket's joint leaves is solved, and only those leaf tables change.
//!
//! ```
//! use pplpc::{enforce, CircuitBuilder, EnforceOptions, Evidence};
//!
//! let mut b = CircuitBuilder::with_binary_variables(2);
//! let x0 = b.bernoulli(0, 0.2);
//! let x1 = b.bernoulli(1, 0.7);
//! let root = b.product(vec![x0, x1]);
//! let c = b.build(root).unwrap();
//!
//! let (out, report) = enforce(&c, "P(x0) = 0.5", &EnforceOptions::default()).unwrap();
//! let p = out.evaluate(&Evidence::new().with(0, 1)).unwrap();
//! assert!((p - 0.5).abs() < 1e-8);
//! assert!(report.total_excess > 0.0);
//! ```

pub mod circuit;
pub mod data;
pub mod enforce;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod learn;
pub mod logic;
pub mod lp;
pub mod oracle;
pub mod rng;
pub mod solver;
pub mod synthetic;
pub mod transform;
pub mod world;

pub use circuit::{Circuit, CircuitBuilder, CircuitError, Evidence, Node, NodeId, ValidityReport, VarId, Variable};
pub use data::{CsvOptions, DataError, Dataset};
pub use enforce::{enforce, enforce_constraints, theorem1_bound, EnforceError, EnforceOptions, EnforcementReport};
pub use error::Error;
pub use eval::{enforce_parity, statistical_parity, BetaSelection, FairnessSpec, Metrics};
pub use experiment::{run_experiment, ExperimentConfig, ResultRow};
pub use learn::{learn_spn, LearnParams};
pub use logic::{bucketize, parse_constraints, Bucket, BucketCaps, Formula, LinearConstraint};
pub use oracle::OracleCaps;
pub use solver::{solve_bucket, BucketProblem, Solution, SolverOptions, Status};
pub use transform::{expand_all, merge_bucket_leaves};
pub use world::WorldSpace;
