//! Batch pipeline for fair PCA: argument parsing, resolution into run
//! configurations, execution and run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairpca::data_io::{AgeMix, DatasetConfig, SplitSpec, TwoGaussianParams};
use fairpca::fairness::{EvalOptions, Family};
use fairpca::fpca::{Constraint, FpcaConfig, KernelSpec};
use fairpca::sdp::SolverSettings;
use serde::Deserialize;

use config::*;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fpca", version, about = "Fair principal component analysis pipeline")]
pub struct Cli {
    /// Base seed for splits, generators, subsampling and cross-validation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Absolute and relative ADMM stopping tolerance.
    #[arg(long, global = true, default_value_t = 1e-5)]
    pub solver_tol: f64,
    /// Print errors as one JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "fpca-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a (fair) PCA model; writes model.json and diagnostics.json.
    Fit(FitArgs),
    /// Project rows with a fitted model; writes reduced.csv (pc1..pcd[, protected]).
    Transform(TransformArgs),
    /// Estimate fairness of reduced data; writes report.json.
    Evaluate(EvaluateArgs),
    /// Train/test protocol over datasets and variants; writes benchmark.csv with columns
    /// dataset,variant,splits_ok,var_explained,delta_lin,delta_rbf,ks,failure.
    Benchmark(BenchmarkArgs),
    /// Delta/mu sensitivity grid; writes sweep.csv with columns
    /// variant,delta,mu,splits_ok,var_explained,delta_lin,failure.
    Sweep(SweepArgs),
    /// k-means on reduced data per variant; writes clusters_<variant>.csv,
    /// composition_<variant>.csv and cluster_summary.csv.
    Cluster(ClusterArgs),
    /// Render a reduced CSV (scatter) or a sweep CSV (curves) as plot.svg.
    Plot(PlotArgs),
    /// Re-run a recorded manifest and verify its output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Synthetic {
    TwoGaussians,
    Activity,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Dataset config JSON: {path, protected_col, positive_value, label_col?, drop_cols[]}.
    #[arg(long, conflicts_with = "input")]
    pub dataset: Option<PathBuf>,
    /// Built-in generator instead of a file.
    #[arg(long, value_enum, conflicts_with_all = ["input", "dataset"])]
    pub synthetic: Option<Synthetic>,
    #[arg(long)]
    pub protected_col: Option<String>,
    /// Protected-column value mapped to +1.
    #[arg(long, default_value = "1")]
    pub positive_value: String,
    #[arg(long)]
    pub label_col: Option<String>,
    #[arg(long)]
    pub label_positive_value: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub drop_cols: Vec<String>,
    /// Rows drawn by the activity generator.
    #[arg(long, default_value_t = default_activity_n())]
    pub n: usize,
}

impl DataArgs {
    fn resolve(&self, seed: u64) -> CliResult<DataSource> {
        let source = if let Some(path) = &self.dataset {
            let cfg = DatasetConfig::from_json_file(path).map_err(|e| match e {
                fairpca::Error::Io(_) => CliError::Core(e),
                other => CliError::Config(other.to_string()),
            })?;
            DataSource::Csv { config: cfg }
        } else if let Some(path) = &self.input {
            let col = self
                .protected_col
                .as_deref()
                .ok_or_else(|| CliError::Config("--protected-col is required with --input".into()))?;
            let mut cfg = DatasetConfig::new(path, col, &self.positive_value);
            cfg.label_col = self.label_col.clone();
            cfg.label_positive_value = self.label_positive_value.clone();
            cfg.drop_cols = self.drop_cols.clone();
            DataSource::Csv { config: cfg }
        } else {
            match self.synthetic {
                Some(Synthetic::TwoGaussians) => {
                    DataSource::TwoGaussians { name: None, params: TwoGaussianParams::default(), seed: None }
                }
                Some(Synthetic::Activity) => DataSource::Activity {
                    name: None,
                    n: self.n,
                    buckets: default_buckets(),
                    age_mix: AgeMix::correlated(),
                    seed: None,
                },
                None => return Err(CliError::Config("one of --input, --dataset or --synthetic is required".into())),
            }
        };
        source.resolve(seed)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Mean-gap bound; `inf` disables it.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    /// Comma list from {none, mean, cov}.
    #[arg(long, value_delimiter = ',', default_value = "mean,cov")]
    pub constraints: Vec<String>,
    /// `linear`, `rbf:<bandwidth>` or `poly:<degree>:<coef>`; omit for linear PCA.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Center only, without scaling to unit variance.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub protected_col: Option<String>,
    #[arg(long, default_value = "1")]
    pub positive_value: String,
    #[arg(long, value_delimiter = ',')]
    pub drop_cols: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub protected_col: String,
    #[arg(long, default_value = "1")]
    pub positive_value: String,
    #[arg(long, value_delimiter = ',')]
    pub drop_cols: Vec<String>,
    /// Comma list from {threshold, linear-svm, rbf-svm}.
    #[arg(long, value_delimiter = ',', default_value = "threshold,linear-svm,rbf-svm")]
    pub families: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Failure probability of the generalization bound.
    #[arg(long, default_value_t = 0.05)]
    pub delta_prob: f64,
    #[arg(long, default_value_t = 2000)]
    pub kernel_max_rows: usize,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Benchmark JSON: {datasets: [...], variants?, splits?, dim?, delta?, mu?, train_fraction?, standardize?}.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5")]
    pub deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1")]
    pub mus: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mean,both")]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "unconstrained,mean,both")]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "scatter")]
    pub kind: PlotKind,
    /// Class column of a reduced CSV (scatter only).
    #[arg(long, default_value = "z")]
    pub protected_col: String,
    #[arg(long, default_value = "1")]
    pub positive_value: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Optional fields of a benchmark file; absent ones take the protocol defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkFile {
    datasets: Vec<DatasetEntry>,
    #[serde(default = "default_variants")]
    variants: Vec<Variant>,
    #[serde(default = "default_splits")]
    splits: usize,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default)]
    delta: f64,
    #[serde(default = "default_mu")]
    mu: f64,
    #[serde(default = "default_fraction")]
    train_fraction: f64,
    #[serde(default = "default_true")]
    standardize: bool,
    #[serde(default = "default_folds")]
    folds: usize,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Unconstrained, Variant::Mean, Variant::Both]
}
fn default_splits() -> usize {
    5
}
fn default_dim() -> usize {
    5
}
fn default_mu() -> f64 {
    0.01
}
fn default_fraction() -> f64 {
    0.7
}
fn default_true() -> bool {
    true
}
fn default_folds() -> usize {
    5
}

fn solver(cli: &Cli, max_iters: Option<usize>) -> CliResult<SolverSettings> {
    if !(cli.solver_tol > 0.0 && cli.solver_tol.is_finite()) {
        return Err(CliError::Config(format!("--solver-tol {} must be positive", cli.solver_tol)));
    }
    let mut s = SolverSettings::with_tolerance(cli.solver_tol);
    if let Some(m) = max_iters {
        s.max_iters = m;
    }
    Ok(s)
}

fn parse_kernel(s: &str) -> CliResult<KernelSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |v: &str| v.parse::<f64>().map_err(|_| CliError::Config(format!("bad kernel parameter '{v}'")));
    let k = match parts.as_slice() {
        ["linear"] => KernelSpec::Linear,
        ["rbf", h] | ["gaussian", h] => KernelSpec::Gaussian { bandwidth: num(h)? },
        ["poly", d, c] => KernelSpec::Polynomial {
            degree: d.parse().map_err(|_| CliError::Config(format!("bad polynomial degree '{d}'")))?,
            coef: num(c)?,
        },
        _ => return Err(CliError::Config(format!("unknown kernel '{s}'"))),
    };
    k.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(k)
}

fn parse_constraints(items: &[String]) -> CliResult<BTreeSet<Constraint>> {
    let mut set = BTreeSet::new();
    for item in items {
        match item.trim() {
            "none" => {}
            "mean" => {
                set.insert(Constraint::Mean);
            }
            "cov" | "covariance" => {
                set.insert(Constraint::Covariance);
            }
            other => return Err(CliError::Config(format!("unknown constraint '{other}'"))),
        }
    }
    Ok(set)
}

fn settings(cli: &Cli, dim: usize, delta: f64, mu: f64, standardize: bool) -> CliResult<FpcaSettings> {
    Ok(FpcaSettings { dim, delta, mu, standardize, solver: solver(cli, None)? })
}

fn check_split(fraction: f64, splits: usize) -> CliResult<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Config(format!("train fraction {fraction} outside (0, 1)")));
    }
    if splits == 0 {
        return Err(CliError::Config("at least one split is required".into()));
    }
    Ok(())
}

/// Turns parsed arguments into a run configuration with every default filled in.
pub fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let seed = cli.seed;
    Ok(match &cli.command {
        Command::Fit(a) => {
            let data = a.data.resolve(seed)?;
            let fpca = FpcaConfig {
                d: a.dim,
                delta: a.delta,
                mu: a.mu,
                constraints: parse_constraints(&a.constraints)?,
                kernel: a.kernel.as_deref().map(parse_kernel).transpose()?,
                standardize: !a.no_standardize,
                seed,
                solver: solver(cli, a.max_iters)?,
                ..FpcaConfig::default()
            };
            RunConfig::Fit(FitConfig { data, fpca })
        }
        Command::Transform(a) => RunConfig::Transform(TransformConfig {
            model: absolute(&a.model)?,
            input: absolute(&a.input)?,
            protected_col: a.protected_col.clone(),
            positive_value: a.positive_value.clone(),
            drop_cols: a.drop_cols.clone(),
        }),
        Command::Evaluate(a) => {
            let families = a
                .families
                .iter()
                .map(|f| f.parse::<Family>().map_err(|e| CliError::Config(e.to_string())))
                .collect::<CliResult<Vec<_>>>()?;
            if a.folds < 2 {
                return Err(CliError::Config("--folds must be at least 2".into()));
            }
            RunConfig::Evaluate(EvaluateConfig {
                input: absolute(&a.input)?,
                protected_col: a.protected_col.clone(),
                positive_value: a.positive_value.clone(),
                drop_cols: a.drop_cols.clone(),
                families,
                options: EvalOptions {
                    folds: a.folds,
                    seed,
                    delta_prob: Some(a.delta_prob),
                    kernel_max_rows: a.kernel_max_rows,
                },
            })
        }
        Command::Benchmark(a) => {
            let text = std::fs::read_to_string(&a.config)?;
            let file: BenchmarkFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid benchmark config {}: {e}", a.config.display())))?;
            if file.datasets.is_empty() {
                return Err(CliError::Config("the benchmark lists no datasets".into()));
            }
            check_split(file.train_fraction, file.splits)?;
            let base = absolute(a.config.parent().unwrap_or(Path::new(".")))?;
            let datasets = file.datasets.into_iter().map(|d| d.resolve(&base, seed)).collect::<CliResult<Vec<_>>>()?;
            RunConfig::Benchmark(BenchmarkConfig {
                datasets,
                variants: file.variants,
                splits: file.splits,
                split: SplitSpec { train_fraction: file.train_fraction, seed, stratify: true },
                fpca: settings(cli, file.dim, file.delta, file.mu, file.standardize)?,
                eval: EvalOptions { folds: file.folds, seed, ..EvalOptions::default() },
            })
        }
        Command::Sweep(a) => {
            check_split(a.train_fraction, a.splits)?;
            let c = SweepConfig {
                data: a.data.resolve(seed)?,
                deltas: a.deltas.clone(),
                mus: a.mus.clone(),
                variants: a.variants.clone(),
                splits: a.splits,
                split: SplitSpec { train_fraction: a.train_fraction, seed, stratify: true },
                fpca: settings(cli, a.dim, 0.0, 0.0, !a.no_standardize)?,
                eval: EvalOptions { seed, ..EvalOptions::default() },
            };
            commands::validate_sweep(&c)?;
            RunConfig::Sweep(c)
        }
        Command::Cluster(a) => RunConfig::Cluster(ClusterConfig {
            data: a.data.resolve(seed)?,
            k: a.k,
            restarts: a.restarts,
            variants: a.variants.clone(),
            fpca: settings(cli, a.dim, a.delta, a.mu, !a.no_standardize)?,
            seed,
        }),
        Command::Plot(a) => RunConfig::Plot(PlotConfig {
            input: absolute(&a.input)?,
            kind: a.kind,
            protected_col: a.protected_col.clone(),
            positive_value: a.positive_value.clone(),
            seed,
        }),
        Command::Replay(_) => return Err(CliError::Config("replay has no run configuration".into())),
    })
}

fn dispatch(cli: &Cli) -> CliResult<manifest::RunManifest> {
    match &cli.command {
        Command::Replay(a) => manifest::replay(&manifest::load(&a.manifest)?, &cli.out),
        _ => manifest::run(&resolve(cli)?, &cli.out),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json_errors = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Config(e.to_string().trim().to_string());
            report(&err, json_errors);
            return err.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}", cli.out.join(&o.path).display());
            }
            0
        }
        Err(e) => {
            report(&e, cli.json_errors);
            e.exit_code()
        }
    }
}

fn report(e: &CliError, json: bool) {
    if json {
        eprintln!("{}", e.to_json());
    } else {
        eprintln!("error: {e}");
    }
}
