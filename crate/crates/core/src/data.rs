//! Discrete data tables with an explicit observation mask, CSV I/O and the
//! two perturbations used by the experiments: subsampling and MCAR masking.

use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{VarId, Variable};
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}, column {col}: {message}")]
    ParseError { row: usize, col: usize, message: String },
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("cannot draw {n} rows from {rows}")]
    NTooLarge { n: usize, rows: usize },
    #[error("variable {name} has no observed entries")]
    AllMissingColumn { var: VarId, name: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::Io(_) => "IO_ERROR",
            DataError::ParseError { .. } => "PARSE_ERROR",
            DataError::RaggedRows { .. } => "RAGGED_ROWS",
            DataError::NTooLarge { .. } => "N_TOO_LARGE",
            DataError::AllMissingColumn { .. } => "ALL_MISSING_COLUMN",
            DataError::Invalid(_) => "INVALID_ARGUMENT",
        }
    }
}

/// Row-major table. `values[r][c]` is meaningful only where `observed[r][c]`;
/// missing cells hold 0 and are never read as data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    variables: Vec<Variable>,
    values: Vec<Vec<usize>>,
    observed: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub header: bool,
    pub missing_token: String,
    /// Overrides inferred arities (e.g. from a sidecar file).
    pub variables: Option<Vec<Variable>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            header: false,
            missing_token: "?".into(),
            variables: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    variables: Vec<Variable>,
}

impl Dataset {
    /// Fully observed dataset. Values must be below their variable's arity.
    pub fn new(variables: Vec<Variable>, rows: Vec<Vec<usize>>) -> Result<Self, DataError> {
        let observed = rows.iter().map(|r| vec![true; r.len()]).collect();
        Self::with_mask(variables, rows, observed)
    }

    /// Rows given as optional cells; `None` is missing.
    pub fn from_cells(variables: Vec<Variable>, cells: Vec<Vec<Option<usize>>>) -> Result<Self, DataError> {
        let values = cells
            .iter()
            .map(|r| r.iter().map(|c| c.unwrap_or(0)).collect())
            .collect();
        let observed = cells.iter().map(|r| r.iter().map(Option::is_some).collect()).collect();
        Self::with_mask(variables, values, observed)
    }

    pub fn with_mask(variables: Vec<Variable>, values: Vec<Vec<usize>>, observed: Vec<Vec<bool>>) -> Result<Self, DataError> {
        for (i, v) in variables.iter().enumerate() {
            if v.id != i || v.arity < 2 {
                return Err(DataError::Invalid(format!("variable {} must have id {i} and arity >= 2", v.name)));
            }
        }
        let n = variables.len();
        if values.len() != observed.len() {
            return Err(DataError::Invalid("mask and table differ in row count".into()));
        }
        for (r, (row, mask)) in values.iter().zip(&observed).enumerate() {
            if row.len() != n || mask.len() != n {
                return Err(DataError::RaggedRows {
                    row: r,
                    expected: n,
                    found: row.len().min(mask.len()),
                });
            }
            for c in 0..n {
                if mask[c] && row[c] >= variables[c].arity {
                    return Err(DataError::ParseError {
                        row: r,
                        col: c,
                        message: format!("value {} exceeds arity {}", row[c], variables[c].arity),
                    });
                }
            }
        }
        Ok(Self {
            variables,
            values,
            observed,
        })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_rows(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell(&self, row: usize, col: VarId) -> Option<usize> {
        self.observed[row][col].then(|| self.values[row][col])
    }

    /// The row as dense evidence (missing cells are `None`).
    pub fn row(&self, row: usize) -> Vec<Option<usize>> {
        (0..self.num_variables()).map(|c| self.cell(row, c)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|r| r.iter().all(|&o| o))
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().flatten().filter(|&&o| !o).count()
    }

    /// New dataset with the given rows, in order. Variables (and arities)
    /// are kept even if a value no longer occurs.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            variables: self.variables.clone(),
            values: rows.iter().map(|&r| self.values[r].clone()).collect(),
            observed: rows.iter().map(|&r| self.observed[r].clone()).collect(),
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text, opts)
    }

    pub fn from_csv_str(text: &str, opts: &CsvOptions) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let mut names: Option<Vec<String>> = None;
        let mut cells: Vec<Vec<Option<usize>>> = Vec::new();
        let mut width: Option<usize> = None;
        let mut line = 0;
        while let Some(rec) = records.next() {
            let rec = rec.map_err(|e| DataError::ParseError {
                row: line,
                col: 0,
                message: e.to_string(),
            })?;
            if rec.len() == 1 && rec[0].is_empty() {
                line += 1;
                continue;
            }
            let w = *width.get_or_insert(rec.len());
            if rec.len() != w {
                return Err(DataError::RaggedRows {
                    row: line,
                    expected: w,
                    found: rec.len(),
                });
            }
            if opts.header && names.is_none() {
                names = Some(rec.iter().map(str::to_string).collect());
                line += 1;
                continue;
            }
            let data_row = cells.len();
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if s == opts.missing_token {
                        Ok(None)
                    } else {
                        s.parse::<usize>().map(Some).map_err(|_| DataError::ParseError {
                            row: data_row,
                            col: c,
                            message: format!("{s:?} is neither a non-negative integer nor the missing token"),
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            cells.push(row);
            line += 1;
        }
        let width = width.unwrap_or(0);
        let variables = match &opts.variables {
            Some(vars) => {
                if vars.len() != width && width != 0 {
                    return Err(DataError::Invalid(format!(
                        "{} variables declared, csv has {width} columns",
                        vars.len()
                    )));
                }
                vars.clone()
            }
            None => {
                let names = names.unwrap_or_else(|| (0..width).map(|i| format!("x{i}")).collect());
                names
                    .into_iter()
                    .enumerate()
                    .map(|(c, name)| {
                        let max = cells.iter().filter_map(|r| r[c]).max().unwrap_or(0);
                        Variable {
                            id: c,
                            name,
                            arity: (max + 1).max(2),
                        }
                    })
                    .collect()
            }
        };
        Self::from_cells(variables, cells)
    }

    pub fn to_csv_string(&self, header: bool, missing_token: &str) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if header {
            w.write_record(self.variables.iter().map(|v| v.name.as_str()))
                .expect("in-memory write");
        }
        for r in 0..self.num_rows() {
            let rec: Vec<String> = self
                .row(r)
                .into_iter()
                .map(|c| c.map_or_else(|| missing_token.to_string(), |v| v.to_string()))
                .collect();
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, header: bool, missing_token: &str) -> Result<(), DataError> {
        std::fs::write(path, self.to_csv_string(header, missing_token))?;
        Ok(())
    }

    /// Variable list as JSON, `{"variables":[{"id","name","arity"}...]}`.
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&Sidecar {
            variables: self.variables.clone(),
        })
        .expect("serializes")
    }

    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Vec<Variable>, DataError> {
        let text = std::fs::read_to_string(path)?;
        let s: Sidecar = serde_json::from_str(&text).map_err(|e| DataError::Invalid(format!("sidecar: {e}")))?;
        Ok(s.variables)
    }

    /// `n` distinct rows drawn uniformly without replacement, in draw order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset, DataError> {
        if n == 0 || n > self.num_rows() {
            return Err(DataError::NTooLarge { n, rows: self.num_rows() });
        }
        let mut rng = rng_from_seed(seed);
        let picked = index::sample(&mut rng, self.num_rows(), n).into_vec();
        Ok(self.select_rows(&picked))
    }

    /// Hides each observed cell independently with probability `rate`.
    /// One uniform draw is consumed per cell (row-major, observed or not),
    /// so a cell's fate does not depend on the rest of the mask.
    pub fn mcar_mask(&self, rate: f64, seed: u64) -> Result<Dataset, DataError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DataError::Invalid(format!("missing rate {rate} outside [0, 1)")));
        }
        let mut rng = rng_from_seed(seed);
        let mut out = self.clone();
        for (vals, mask) in out.values.iter_mut().zip(out.observed.iter_mut()) {
            for (v, o) in vals.iter_mut().zip(mask.iter_mut()) {
                let u: f64 = rng.random();
                if *o && u < rate {
                    *o = false;
                    *v = 0;
                }
            }
        }
        Ok(out)
    }

    /// Random split; the test part gets `round(test_fraction * rows)` rows.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(DataError::Invalid(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let n = self.num_rows();
        let mut rng = rng_from_seed(seed);
        let perm = index::sample(&mut rng, n, n).into_vec();
        let n_test = (test_fraction * n as f64).round() as usize;
        let (test, train) = perm.split_at(n_test);
        Ok((self.select_rows(train), self.select_rows(test)))
    }

    /// Per-variable relative frequencies over observed entries.
    pub fn empirical_marginals(&self) -> Result<Vec<Vec<f64>>, DataError> {
        self.variables
            .iter()
            .map(|v| {
                let mut counts = vec![0usize; v.arity];
                for r in 0..self.num_rows() {
                    if let Some(x) = self.cell(r, v.id) {
                        counts[x] += 1;
                    }
                }
                let total: usize = counts.iter().sum();
                if total == 0 {
                    return Err(DataError::AllMissingColumn {
                        var: v.id,
                        name: v.name.clone(),
                    });
                }
                Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> CsvOptions {
        CsvOptions::default()
    }

    #[test]
    fn loads_plain_rows() {
        let d = Dataset::from_csv_str("1,0\n0,1\n", &opts()).unwrap();
        assert_eq!(d.num_variables(), 2);
        assert_eq!(d.num_rows(), 2);
        assert!(d.is_complete());
        assert_eq!(d.row(0), vec![Some(1), Some(0)]);
        assert!(d.variables().iter().all(|v| v.arity == 2));
    }

    #[test]
    fn missing_token_sets_the_mask() {
        let d = Dataset::from_csv_str("1,?\n", &opts()).unwrap();
        assert_eq!(d.cell(0, 0), Some(1));
        assert_eq!(d.cell(0, 1), None);
        let d = Dataset::from_csv_str("1,NA\n", &CsvOptions {
            missing_token: "NA".into(),
            ..opts()
        })
        .unwrap();
        assert_eq!(d.cell(0, 1), None);
    }

    #[test]
    fn arity_is_one_plus_max() {
        let d = Dataset::from_csv_str("a,b\n3,0\n1,0\n", &CsvOptions {
            header: true,
            ..opts()
        })
        .unwrap();
        assert_eq!(d.variables()[0].arity, 4);
        assert_eq!(d.variables()[1].arity, 2);
        assert_eq!(d.variables()[1].name, "b");
    }

    #[test]
    fn bad_cells_and_ragged_rows() {
        match Dataset::from_csv_str("1,0\n0,x\n", &opts()) {
            Err(DataError::ParseError { row: 1, col: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Dataset::from_csv_str("1,0\n0\n", &opts()),
            Err(DataError::RaggedRows { row: 1, .. })
        ));
    }

    #[test]
    fn save_then_load_is_identity() {
        let d = Dataset::from_csv_str("x,y,z\n1,?,2\n0,1,0\n?,?,1\n", &CsvOptions {
            header: true,
            ..opts()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.save_csv(&path, true, "?").unwrap();
        let side = dir.path().join("d.json");
        std::fs::write(&side, d.sidecar_json()).unwrap();
        let back = Dataset::load_csv(&path, &CsvOptions {
            header: true,
            variables: Some(Dataset::load_sidecar(&side).unwrap()),
            ..opts()
        })
        .unwrap();
        assert_eq!(back, d);
    }

    fn counting(n: usize) -> Dataset {
        let vars = vec![Variable { id: 0, name: "i".into(), arity: n }];
        Dataset::new(vars, (0..n).map(|i| vec![i]).collect()).unwrap()
    }

    #[test]
    fn full_subsample_is_a_permutation() {
        let d = counting(50);
        let s = d.subsample(50, 3).unwrap();
        let mut got: Vec<usize> = (0..50).map(|r| s.cell(r, 0).unwrap()).collect();
        got.sort();
        assert_eq!(got, (0..50).collect::<Vec<_>>());
        assert_eq!(d.subsample(1, 3).unwrap().num_rows(), 1);
        assert!(matches!(d.subsample(51, 3), Err(DataError::NTooLarge { .. })));
        assert_eq!(d.subsample(10, 9).unwrap(), d.subsample(10, 9).unwrap());
    }

    #[test]
    fn subsample_keeps_arity() {
        let d = Dataset::from_csv_str("0\n1\n1\n", &opts()).unwrap();
        let s = d.select_rows(&[0]);
        assert_eq!(s.variables()[0].arity, 2);
    }

    #[test]
    fn inclusion_frequency_is_n_over_rows() {
        let (rows, n, seeds) = (20usize, 5usize, 10_000usize);
        let d = counting(rows);
        let mut hits = vec![0usize; rows];
        for seed in 0..seeds {
            let s = d.subsample(n, seed as u64).unwrap();
            for r in 0..n {
                hits[s.cell(r, 0).unwrap()] += 1;
            }
        }
        let p = n as f64 / rows as f64;
        let sd = (seeds as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - seeds as f64 * p).abs() <= 3.0 * sd + 1.0, "{h}");
        }
    }

    #[test]
    fn mcar_rate_zero_is_identity_and_rate_half_concentrates() {
        let vars: Vec<Variable> = (0..1000).map(|i| Variable::binary(i, format!("x{i}"))).collect();
        let d = Dataset::new(vars, vec![vec![1; 1000]; 1000]).unwrap();
        assert_eq!(d.mcar_mask(0.0, 1).unwrap(), d);
        let m = d.mcar_mask(0.5, 1).unwrap();
        let frac = m.missing_count() as f64 / 1e6;
        assert!((frac - 0.5).abs() <= 0.002, "{frac}");
        // masking again only hides more cells
        let mm = m.mcar_mask(0.5, 2).unwrap();
        for r in 0..1000 {
            for c in 0..1000 {
                if m.cell(r, c).is_none() {
                    assert!(mm.cell(r, c).is_none());
                }
            }
        }
        assert!(d.mcar_mask(1.0, 0).is_err());
    }

    #[test]
    fn available_case_marginals() {
        let d = Dataset::from_csv_str("1\n1\n0\n1\n", &opts()).unwrap();
        assert_eq!(d.empirical_marginals().unwrap()[0][1], 0.75);
        let d = Dataset::from_csv_str("1\n?\n0\n?\n", &opts()).unwrap();
        assert_eq!(d.empirical_marginals().unwrap()[0][1], 0.5);
        let d = Dataset::from_csv_str("?\n?\n", &CsvOptions {
            variables: Some(vec![Variable::binary(0, "x")]),
            ..opts()
        })
        .unwrap();
        assert!(matches!(d.empirical_marginals(), Err(DataError::AllMissingColumn { .. })));
    }

    #[test]
    fn split_partitions_rows() {
        let d = counting(10);
        let (tr, te) = d.train_test_split(0.3, 4).unwrap();
        assert_eq!((tr.num_rows(), te.num_rows()), (7, 3));
        let mut all: Vec<usize> = (0..7).map(|r| tr.cell(r, 0).unwrap()).collect();
        all.extend((0..3).map(|r| te.cell(r, 0).unwrap()));
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
