//! Experiment protocols: scarce data, MCAR missingness, parity enforcement
//! and user-supplied constraints. Every grid cell (seed x setting) learns a
//! baseline, enforces constraints and records both sets of metrics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::Circuit;
use crate::data::{CsvOptions, DataError, Dataset};
use crate::enforce::{enforce, EnforceError, EnforceOptions};
use crate::eval::{self, EvalError, FairnessSpec};
use crate::learn::{learn_spn, marginal_constraint_text, LearnError, LearnParams};
use crate::oracle::{enumerate_joint, kl_divergence};
use crate::rng::derive_seed;
use crate::synthetic;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Enforce(#[from] EnforceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "INVALID_CONFIG",
            ExperimentError::Data(e) => e.code(),
            ExperimentError::Learn(e) => e.code(),
            ExperimentError::Enforce(e) => e.code(),
            ExperimentError::Eval(e) => e.code(),
            ExperimentError::Io(_) => "IO_ERROR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Scarce,
    Mcar,
    Fairness,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        header: bool,
        #[serde(default = "default_missing")]
        missing_token: String,
        /// Optional JSON sidecar with variable arities.
        #[serde(default)]
        sidecar: Option<PathBuf>,
    },
    /// Samples from the fixed 10-variable synthetic model.
    GroundTruth { rows: usize },
    /// Synthetic census-like table.
    AdultLike { rows: usize },
}

fn default_missing() -> String {
    "?".into()
}

/// Source of the marginal targets in the scarce-data protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSource {
    /// Marginals of the whole training pool before subsampling.
    Pool,
    /// Marginals of the subsample the model was trained on.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub significance: f64,
    pub laplace: f64,
    pub min_instances: usize,
    pub n_clusters: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let p = LearnParams::default();
        Self {
            significance: p.significance,
            laplace: p.laplace,
            min_instances: p.min_instances,
            n_clusters: p.n_clusters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    pub target: String,
    pub protected: String,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_grid() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub data: DataSource,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub fairness: Option<FairnessConfig>,
    /// Constraint file for `custom` mode.
    #[serde(default)]
    pub constraints: Option<PathBuf>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha_source: AlphaSource,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_alpha() -> AlphaSource {
    AlphaSource::Pool
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ExperimentError> {
        let c: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let mut c = Self::from_json_str(&std::fs::read_to_string(path.as_ref())?)?;
        // relative paths are taken from the config file's directory
        let base = path.as_ref().parent().map(Path::to_path_buf).unwrap_or_default();
        if let DataSource::Csv { path, sidecar, .. } = &mut c.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if let Some(s) = sidecar {
                if s.is_relative() {
                    *s = base.join(&*s);
                }
            }
        }
        if let Some(p) = &mut c.constraints {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        match self.mode {
            Mode::Scarce if self.sizes.is_empty() => bad("scarce mode needs sizes"),
            Mode::Mcar if self.rates.is_empty() => bad("mcar mode needs rates"),
            Mode::Mcar if self.rates.iter().any(|r| !(0.0..1.0).contains(r)) => bad("rates must lie in [0, 1)"),
            Mode::Fairness if self.fairness.is_none() => bad("fairness mode needs a fairness block"),
            Mode::Custom if self.constraints.is_none() => bad("custom mode needs a constraints file"),
            _ => Ok(()),
        }
    }

    fn learn_params(&self, seed: u64) -> LearnParams {
        LearnParams {
            significance: self.learner.significance,
            laplace: self.learner.laplace,
            min_instances: self.learner.min_instances,
            n_clusters: self.learner.n_clusters,
            seed,
            ..LearnParams::default()
        }
    }
}

/// One line of `results.csv`. Metrics that do not apply are empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub mode: Mode,
    /// Subsample size, missing rate, or grid size, as text.
    pub setting: String,
    pub seed: u64,
    pub n_train: usize,
    pub baseline_test_ll: Option<f64>,
    pub enforced_test_ll: Option<f64>,
    /// Against the test-set marginals.
    pub baseline_marginal_qerr: Option<f64>,
    pub enforced_marginal_qerr: Option<f64>,
    pub baseline_parity: Option<f64>,
    pub enforced_parity: Option<f64>,
    pub baseline_accuracy: Option<f64>,
    pub enforced_accuracy: Option<f64>,
    /// `KL(truth || model)` when the data come from the synthetic model.
    pub baseline_kl: Option<f64>,
    pub enforced_kl: Option<f64>,
    pub beta: Option<f64>,
    pub excess: Option<f64>,
    pub enforce_secs: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    fn empty(mode: Mode, setting: String, seed: u64) -> Self {
        Self {
            mode,
            setting,
            seed,
            n_train: 0,
            baseline_test_ll: None,
            enforced_test_ll: None,
            baseline_marginal_qerr: None,
            enforced_marginal_qerr: None,
            baseline_parity: None,
            enforced_parity: None,
            baseline_accuracy: None,
            enforced_accuracy: None,
            baseline_kl: None,
            enforced_kl: None,
            beta: None,
            excess: None,
            enforce_secs: None,
            error: None,
        }
    }
}

fn load_data(source: &DataSource, seed: u64) -> Result<Dataset, ExperimentError> {
    Ok(match source {
        DataSource::Csv {
            path,
            header,
            missing_token,
            sidecar,
        } => {
            let variables = sidecar.as_ref().map(Dataset::load_sidecar).transpose()?;
            Dataset::load_csv(path, &CsvOptions {
                header: *header,
                missing_token: missing_token.clone(),
                variables,
            })?
        }
        DataSource::GroundTruth { rows } => synthetic::sample_dataset(&synthetic::ground_truth_circuit(), *rows, seed),
        DataSource::AdultLike { rows } => synthetic::adult_like(*rows, seed),
    })
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    truth: Option<&'a [f64]>,
}

impl Cell<'_> {
    fn kl(&self, c: &Circuit) -> Option<f64> {
        let t = self.truth?;
        let q = enumerate_joint(c, 1 << 20).ok()?;
        kl_divergence(t, &q).ok()
    }

    fn opts(&self) -> EnforceOptions {
        EnforceOptions {
            tol: self.cfg.tol,
            ..EnforceOptions::default()
        }
    }

    /// Learn on `train`, enforce `text`, fill the row.
    fn marginal_run(&self, row: &mut ResultRow, train: &Dataset, test: &Dataset, alpha: &[Vec<f64>]) -> Result<(), ExperimentError> {
        row.n_train = train.num_rows();
        let base = learn_spn(train, &self.cfg.learn_params(self.seed))?;
        let text = marginal_constraint_text(train.variables(), alpha);
        self.finish(row, base, &text, test)
    }

    fn finish(&self, row: &mut ResultRow, base: Circuit, text: &str, test: &Dataset) -> Result<(), ExperimentError> {
        row.baseline_test_ll = Some(eval::avg_log_likelihood(&base, test)?.mean);
        row.baseline_marginal_qerr = Some(eval::marginal_quadratic_error(&base, test)?);
        row.baseline_kl = self.kl(&base);
        let start = Instant::now();
        let (enforced, report) = enforce(&base, text, &self.opts())?;
        row.enforce_secs = Some(start.elapsed().as_secs_f64());
        row.excess = Some(report.total_excess);
        row.enforced_test_ll = Some(eval::avg_log_likelihood(&enforced, test)?.mean);
        row.enforced_marginal_qerr = Some(eval::marginal_quadratic_error(&enforced, test)?);
        row.enforced_kl = self.kl(&enforced);
        Ok(())
    }
}

fn guarded(mut row: ResultRow, f: impl FnOnce(&mut ResultRow) -> Result<(), ExperimentError>) -> ResultRow {
    if let Err(e) = f(&mut row) {
        row.error = Some(format!("{}: {e}", e.code()));
    }
    row
}

/// Runs every (seed, setting) cell. Per-cell failures are recorded in the
/// row's `error` column; configuration and loading errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    cfg.check()?;
    let truth: Option<Vec<f64>> = match cfg.data {
        DataSource::GroundTruth { .. } => Some(
            enumerate_joint(&synthetic::ground_truth_circuit(), 1 << 20).expect("10 binary variables enumerate"),
        ),
        _ => None,
    };
    // Data are drawn once from the first seed; each seed then re-splits.
    let data = load_data(&cfg.data, derive_seed(cfg.seeds[0], 0xda7a))?;
    let cells: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| {
            let n = match cfg.mode {
                Mode::Scarce => cfg.sizes.len(),
                Mode::Mcar => cfg.rates.len(),
                Mode::Fairness | Mode::Custom => 1,
            };
            (0..n).map(move |i| (s, i))
        })
        .collect();
    let custom_text = match (&cfg.mode, &cfg.constraints) {
        (Mode::Custom, Some(p)) => Some(std::fs::read_to_string(p)?),
        _ => None,
    };

    let rows = cells
        .par_iter()
        .map(|&(seed, i)| -> Result<ResultRow, ExperimentError> {
            let cell = Cell {
                cfg,
                seed,
                truth: truth.as_deref(),
            };
            let (pool, test) = data.train_test_split(cfg.test_fraction, derive_seed(seed, 1))?;
            Ok(match cfg.mode {
                Mode::Scarce => {
                    let n = cfg.sizes[i];
                    guarded(ResultRow::empty(cfg.mode, n.to_string(), seed), |row| {
                        let train = pool.subsample(n, derive_seed(seed, 2 + n as u64))?;
                        let alpha = match cfg.alpha_source {
                            AlphaSource::Pool => pool.empirical_marginals()?,
                            AlphaSource::Train => train.empirical_marginals()?,
                        };
                        cell.marginal_run(row, &train, &test, &alpha)
                    })
                }
                Mode::Mcar => {
                    let rate = cfg.rates[i];
                    guarded(ResultRow::empty(cfg.mode, rate.to_string(), seed), |row| {
                        let train = pool.mcar_mask(rate, derive_seed(seed, rate.to_bits()))?;
                        let alpha = train.empirical_marginals()?;
                        cell.marginal_run(row, &train, &test, &alpha)
                    })
                }
                Mode::Custom => guarded(ResultRow::empty(cfg.mode, "custom".into(), seed), |row| {
                    row.n_train = pool.num_rows();
                    let base = learn_spn(&pool, &cfg.learn_params(seed))?;
                    cell.finish(row, base, custom_text.as_deref().unwrap_or_default(), &test)
                }),
                Mode::Fairness => {
                    let f = cfg.fairness.as_ref().expect("checked");
                    guarded(ResultRow::empty(cfg.mode, format!("grid={}", f.grid), seed), |row| {
                        fairness_cell(&cell, row, f, &pool, &test)
                    })
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows)
}

fn var_id(data: &Dataset, name: &str) -> Result<usize, ExperimentError> {
    data.variables()
        .iter()
        .position(|v| v.name == name)
        .ok_or_else(|| ExperimentError::Config(format!("no variable named {name}")))
}

fn fairness_cell(cell: &Cell, row: &mut ResultRow, f: &FairnessConfig, train: &Dataset, test: &Dataset) -> Result<(), ExperimentError> {
    let spec = FairnessSpec {
        grid: f.grid,
        ..FairnessSpec::new(var_id(train, &f.target)?, var_id(train, &f.protected)?)
    };
    row.n_train = train.num_rows();
    let params = LearnParams {
        groups: vec![vec![spec.target, spec.protected]],
        ..cell.cfg.learn_params(cell.seed)
    };
    let base = learn_spn(train, &params)?;
    row.baseline_test_ll = Some(eval::avg_log_likelihood(&base, test)?.mean);
    row.baseline_marginal_qerr = Some(eval::marginal_quadratic_error(&base, test)?);
    row.baseline_parity = Some(eval::statistical_parity(&base, &spec)?);
    row.baseline_accuracy = Some(eval::accuracy(&base, test, spec.target)?);
    let start = Instant::now();
    let out = eval::enforce_parity(&base, &spec, &cell.opts(), None)?;
    row.enforce_secs = Some(start.elapsed().as_secs_f64());
    row.beta = Some(out.beta);
    row.excess = Some(out.report.total_excess);
    row.enforced_test_ll = Some(eval::avg_log_likelihood(&out.circuit, test)?.mean);
    row.enforced_marginal_qerr = Some(eval::marginal_quadratic_error(&out.circuit, test)?);
    row.enforced_parity = Some(eval::statistical_parity(&out.circuit, &spec)?);
    row.enforced_accuracy = Some(eval::accuracy(&out.circuit, test, spec.target)?);
    Ok(())
}

/// Column order of `results.csv`.
pub const RESULT_COLUMNS: [&str; 18] = [
    "mode",
    "setting",
    "seed",
    "n_train",
    "baseline_test_ll",
    "enforced_test_ll",
    "baseline_marginal_qerr",
    "enforced_marginal_qerr",
    "baseline_parity",
    "enforced_parity",
    "baseline_accuracy",
    "enforced_accuracy",
    "baseline_kl",
    "enforced_kl",
    "beta",
    "excess",
    "enforce_secs",
    "error",
];

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), ExperimentError> {
    std::fs::write(path, results_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_with_defaults() {
        let c = ExperimentConfig::from_json_str(
            r#"{"mode":"scarce","data":{"kind":"ground_truth","rows":400},"seeds":[1,2],"sizes":[50,100]}"#,
        )
        .unwrap();
        assert_eq!(c.tol, 1e-8);
        assert_eq!(c.alpha_source, AlphaSource::Pool);
        assert_eq!(c.learner, LearnerConfig::default());
        assert!(ExperimentConfig::from_json_str(r#"{"mode":"mcar","data":{"kind":"ground_truth","rows":10},"seeds":[1]}"#).is_err());
    }

    #[test]
    fn scarce_grid_has_one_row_per_cell() {
        let c = ExperimentConfig::from_json_str(
            r#"{"mode":"scarce","data":{"kind":"ground_truth","rows":600},"seeds":[1,2],"sizes":[50,100]}"#,
        )
        .unwrap();
        let rows = run_experiment(&c).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(r.enforced_kl.unwrap().is_finite());
        }
        let text = results_csv(&rows);
        let header = text.lines().next().unwrap();
        assert_eq!(header, RESULT_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 5);
    }
}
