use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pplpc::eval::{compute_metrics, enforce_parity, BetaSelection, FairnessSpec};
use pplpc::experiment::{results_csv, run_experiment, ExperimentConfig};
use pplpc::{
    enforce, expand_all, learn_spn, BucketCaps, Circuit, CsvOptions, Dataset, EnforceOptions, Error, LearnParams, VarId,
};

#[derive(Parser)]
#[command(name = "pplpc", version, about = "Enforce probabilistic logic constraints on probabilistic circuits")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Feasibility and convergence tolerance.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Merge factorized bucket variables into joint leaves (default).
    #[arg(long, global = true, overrides_with = "no_merge")]
    merge: bool,
    #[arg(long, global = true)]
    no_merge: bool,
    /// Number of beta values tried by the fairness search.
    #[arg(long, global = true, default_value_t = 101)]
    grid: usize,
    #[arg(long, global = true, default_value = "?")]
    missing_token: String,
    /// Largest number of variables in one bucket.
    #[arg(long, global = true, default_value_t = 12)]
    cap_bucket_size: usize,
    /// Largest number of worlds enumerated for one bucket.
    #[arg(long, global = true, default_value_t = 1 << 20)]
    cap_enum: usize,
}

#[derive(Args)]
struct DataArgs {
    /// First CSV line holds variable names.
    #[arg(long)]
    header: bool,
    /// JSON file listing variables and arities.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check structural properties of a circuit.
    Validate { circuit: PathBuf },
    /// Learn a circuit from a CSV file.
    Learn {
        data: PathBuf,
        #[command(flatten)]
        data_args: DataArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        significance: f64,
        #[arg(long, default_value_t = 0.01)]
        laplace: f64,
        #[arg(long, default_value_t = 10)]
        min_instances: usize,
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        /// Comma-separated variables kept in one joint leaf; repeatable.
        #[arg(long = "group")]
        groups: Vec<String>,
    },
    /// Enforce a constraint file on a circuit.
    Enforce {
        circuit: PathBuf,
        constraints: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Metrics of a circuit on a dataset.
    Eval {
        circuit: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        data_args: DataArgs,
        /// Target and protected variable.
        #[arg(long, num_args = 2, value_names = ["Y", "X"])]
        fairness: Option<Vec<String>>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Enforce zero statistical parity, searching the beta grid.
    Fairness {
        circuit: PathBuf,
        data: PathBuf,
        target: String,
        protected: String,
        #[command(flatten)]
        data_args: DataArgs,
        /// Pick beta by likelihood on the data instead of smallest excess.
        #[arg(long)]
        select_by_likelihood: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run an experiment grid from a JSON config.
    Experiment {
        config: PathBuf,
        /// Defaults to results.csv in the config's output_dir, else stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Replace every joint leaf by indicator products under a sum.
    Expand {
        circuit: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

enum Fail {
    Domain(Error),
    Io(PathBuf, std::io::Error),
    Usage(String),
}

macro_rules! domain {
    ($($t:ty),*) => {$(
        impl From<$t> for Fail {
            fn from(e: $t) -> Self {
                Fail::Domain(e.into())
            }
        }
    )*};
}

domain!(
    pplpc::CircuitError,
    pplpc::DataError,
    pplpc::EnforceError,
    pplpc::eval::EvalError,
    pplpc::learn::LearnError,
    pplpc::transform::TransformError,
    pplpc::experiment::ExperimentError
);

#[derive(Serialize)]
struct ErrorJson<'a> {
    code: &'a str,
    message: String,
}

type Res<T> = Result<T, Fail>;

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Fail::Io(path.to_path_buf(), e))
}

fn emit(out: Option<&Path>, text: &str) -> Res<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Fail::Io(p.to_path_buf(), e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_circuit(path: &Path) -> Res<Circuit> {
    Ok(Circuit::from_json_str(&read(path)?)?)
}

fn load_data(path: &Path, args: &DataArgs, g: &Global, circuit: Option<&Circuit>) -> Res<Dataset> {
    let variables = match (&args.sidecar, circuit) {
        (Some(s), _) => Some(Dataset::load_sidecar(s)?),
        (None, Some(c)) => Some(c.variables().to_vec()),
        (None, None) => None,
    };
    let opts = CsvOptions {
        header: args.header,
        missing_token: g.missing_token.clone(),
        variables,
    };
    Ok(Dataset::from_csv_str(&read(path)?, &opts)?)
}

fn resolve(circuit: &Circuit, name: &str) -> Res<VarId> {
    if let Some(v) = circuit.variable_by_name(name) {
        return Ok(v.id);
    }
    name.parse::<VarId>()
        .ok()
        .filter(|&i| i < circuit.num_variables())
        .ok_or_else(|| Fail::Usage(format!("unknown variable {name}")))
}

fn enforce_opts(g: &Global) -> EnforceOptions {
    EnforceOptions {
        tol: g.tol,
        merge: !g.no_merge,
        caps: BucketCaps {
            max_vars: g.cap_bucket_size,
            max_worlds: g.cap_enum,
        },
        ..EnforceOptions::default()
    }
}

fn run(cli: Cli) -> Res<()> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::Validate { circuit } => {
            let c = load_circuit(&circuit)?;
            let report = c.validate();
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            c.ensure_valid()?;
        }
        Cmd::Learn {
            data,
            data_args,
            out,
            significance,
            laplace,
            min_instances,
            clusters,
            groups,
        } => {
            let d = load_data(&data, &data_args, g, None)?;
            let names = d.variables();
            let groups = groups
                .iter()
                .map(|s| {
                    s.split(',')
                        .map(|n| {
                            let n = n.trim();
                            names
                                .iter()
                                .find(|v| v.name == n)
                                .map(|v| v.id)
                                .or_else(|| n.parse().ok())
                                .ok_or_else(|| Fail::Usage(format!("unknown variable {n}")))
                        })
                        .collect::<Res<Vec<VarId>>>()
                })
                .collect::<Res<Vec<_>>>()?;
            let params = LearnParams {
                significance,
                laplace,
                min_instances,
                n_clusters: clusters,
                seed: g.seed,
                groups,
                ..LearnParams::default()
            };
            let c = learn_spn(&d, &params)?;
            emit(out.as_deref(), &c.to_json_string())?;
        }
        Cmd::Enforce {
            circuit,
            constraints,
            out,
            report,
        } => {
            let c = load_circuit(&circuit)?;
            let (q, rep) = enforce(&c, &read(&constraints)?, &enforce_opts(g))?;
            emit(out.as_deref(), &q.to_json_string())?;
            match report {
                Some(p) => emit(Some(&p), &rep.to_json_string())?,
                None => eprintln!("{}", rep.to_json_string()),
            }
        }
        Cmd::Eval {
            circuit,
            data,
            data_args,
            fairness,
            out,
        } => {
            let c = load_circuit(&circuit)?;
            let d = load_data(&data, &data_args, g, Some(&c))?;
            let spec = match fairness.as_deref() {
                Some([y, x]) => Some(FairnessSpec {
                    grid: g.grid,
                    ..FairnessSpec::new(resolve(&c, y)?, resolve(&c, x)?)
                }),
                _ => None,
            };
            let m = compute_metrics(&c, &d, spec.as_ref(), None)?;
            emit(out.as_deref(), &m.to_json_string())?;
        }
        Cmd::Fairness {
            circuit,
            data,
            target,
            protected,
            data_args,
            select_by_likelihood,
            out,
            metrics,
        } => {
            let c = load_circuit(&circuit)?;
            let d = load_data(&data, &data_args, g, Some(&c))?;
            let spec = FairnessSpec {
                grid: g.grid,
                selection: if select_by_likelihood {
                    BetaSelection::ValidationLikelihood
                } else {
                    BetaSelection::MinExcess
                },
                ..FairnessSpec::new(resolve(&c, &target)?, resolve(&c, &protected)?)
            };
            let res = enforce_parity(&c, &spec, &enforce_opts(g), Some(&d))?;
            let m = compute_metrics(&res.circuit, &d, Some(&spec), Some(res.beta))?;
            emit(out.as_deref(), &res.circuit.to_json_string())?;
            match metrics {
                Some(p) => emit(Some(&p), &m.to_json_string())?,
                None => eprintln!("{}", m.to_json_string()),
            }
        }
        Cmd::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = run_experiment(&cfg)?;
            let csv = results_csv(&rows);
            let target = out.or_else(|| cfg.output_dir.as_ref().map(|d| d.join("results.csv")));
            if let Some(p) = &target {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| Fail::Io(dir.to_path_buf(), e))?;
                }
                fs::write(p, &csv).map_err(|e| Fail::Io(p.clone(), e))?;
            } else {
                print!("{csv}");
            }
        }
        Cmd::Expand { circuit, out } => {
            let c = load_circuit(&circuit)?;
            emit(out.as_deref(), &expand_all(&c)?.to_json_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("PPLPC_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(f) => {
            let (code, message) = match f {
                Fail::Domain(e) => (e.code(), e.to_string()),
                Fail::Io(p, e) => ("IO_ERROR", format!("{}: {e}", p.display())),
                Fail::Usage(_) => unreachable!(),
            };
            let j = ErrorJson { code, message };
            eprintln!("{}", serde_json::to_string(&j).expect("error serializes"));
            ExitCode::from(1)
        }
    }
}
