//! Fully resolved run configurations. Every default is materialized here so a
//! manifest alone is enough to repeat a run.

use std::path::{Path, PathBuf};

use fairpca::data_io::{self, AgeMix, Dataset, DatasetConfig, SplitSpec, TwoGaussianParams};
use fairpca::fairness::{EvalOptions, Family};
use fairpca::fpca::FpcaConfig;
use fairpca::sdp::SolverSettings;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Csv {
        #[serde(flatten)]
        config: DatasetConfig,
    },
    TwoGaussians {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        params: TwoGaussianParams,
        #[serde(default)]
        seed: Option<u64>,
    },
    Activity {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "default_activity_n")]
        n: usize,
        #[serde(default = "default_buckets")]
        buckets: usize,
        #[serde(default)]
        age_mix: AgeMix,
        #[serde(default)]
        seed: Option<u64>,
    },
}

pub fn default_activity_n() -> usize {
    3000
}

pub fn default_buckets() -> usize {
    72
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::Csv { config } => config.display_name(),
            DataSource::TwoGaussians { name, .. } => name.clone().unwrap_or_else(|| "two-gaussians".into()),
            DataSource::Activity { name, .. } => name.clone().unwrap_or_else(|| "activity".into()),
        }
    }

    /// Fills unset generator seeds and makes file paths absolute.
    pub fn resolve(mut self, seed: u64) -> CliResult<Self> {
        match &mut self {
            DataSource::Csv { config } => config.path = absolute(&config.path)?,
            DataSource::TwoGaussians { seed: s, .. } | DataSource::Activity { seed: s, .. } => {
                s.get_or_insert(seed);
            }
        }
        Ok(self)
    }

    pub fn load(&self) -> CliResult<Dataset> {
        Ok(match self {
            DataSource::Csv { config } => data_io::load_csv(&config.path, config)?.dataset,
            DataSource::TwoGaussians { params, seed, .. } => data_io::synth_two_gaussians(params, seed.unwrap_or(0))?,
            DataSource::Activity { n, buckets, age_mix, seed, .. } => {
                data_io::synth_activity_profiles(*n, *buckets, age_mix, seed.unwrap_or(0))?.0
            }
        })
    }

    pub fn input_files(&self) -> Vec<PathBuf> {
        match self {
            DataSource::Csv { config } => vec![config.path.clone()],
            _ => Vec::new(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DataSource::Csv { .. } => None,
            DataSource::TwoGaussians { seed, .. } | DataSource::Activity { seed, .. } => *seed,
        }
    }
}

/// Dataset entry of a benchmark file: a path to a dataset config, a tagged
/// source, or an inline dataset config.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DatasetEntry {
    Path(PathBuf),
    Source(DataSource),
    Csv(DatasetConfig),
}

impl DatasetEntry {
    /// `base` is the directory relative paths are resolved against.
    pub fn resolve(self, base: &Path, seed: u64) -> CliResult<DataSource> {
        let source = match self {
            DatasetEntry::Path(p) => {
                let cfg = DatasetConfig::from_json_file(&base.join(p)).map_err(config_error)?;
                DataSource::Csv { config: cfg }
            }
            DatasetEntry::Source(DataSource::Csv { mut config }) | DatasetEntry::Csv(mut config) => {
                if config.path.is_relative() {
                    config.path = base.join(&config.path);
                }
                DataSource::Csv { config }
            }
            DatasetEntry::Source(s) => s,
        };
        source.resolve(seed)
    }
}

fn config_error(e: fairpca::Error) -> CliError {
    match e {
        fairpca::Error::Io(_) => CliError::Core(e),
        other => CliError::Config(other.to_string()),
    }
}

pub fn absolute(path: &Path) -> CliResult<PathBuf> {
    Ok(if path.is_absolute() { path.to_path_buf() } else { std::env::current_dir()?.join(path) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Unconstrained,
    Mean,
    Both,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Unconstrained => "unconstrained",
            Variant::Mean => "mean",
            Variant::Both => "both",
        })
    }
}

/// FPCA settings shared by the multi-variant commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaSettings {
    pub dim: usize,
    pub delta: f64,
    pub mu: f64,
    pub standardize: bool,
    pub solver: SolverSettings,
}

impl FpcaSettings {
    pub fn config(&self, variant: Variant) -> FpcaConfig {
        self.config_with(variant, self.delta, self.mu)
    }

    pub fn config_with(&self, variant: Variant, delta: f64, mu: f64) -> FpcaConfig {
        let base = match variant {
            Variant::Unconstrained => FpcaConfig::pca(self.dim),
            Variant::Mean => FpcaConfig::mean_only(self.dim, delta),
            Variant::Both => FpcaConfig::fair(self.dim, delta, mu),
        };
        FpcaConfig { standardize: self.standardize, solver: self.solver.clone(), ..base }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: DataSource,
    pub fpca: FpcaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub model: PathBuf,
    pub input: PathBuf,
    /// Passed through to the output as a ±1 column when set.
    pub protected_col: Option<String>,
    pub positive_value: String,
    pub drop_cols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub input: PathBuf,
    pub protected_col: String,
    pub positive_value: String,
    pub drop_cols: Vec<String>,
    pub families: Vec<Family>,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub datasets: Vec<DataSource>,
    pub variants: Vec<Variant>,
    pub splits: usize,
    pub split: SplitSpec,
    pub fpca: FpcaSettings,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub data: DataSource,
    pub deltas: Vec<f64>,
    pub mus: Vec<f64>,
    pub variants: Vec<Variant>,
    pub splits: usize,
    pub split: SplitSpec,
    pub fpca: FpcaSettings,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub data: DataSource,
    pub k: usize,
    pub restarts: usize,
    pub variants: Vec<Variant>,
    pub fpca: FpcaSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Scatter,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotConfig {
    pub input: PathBuf,
    pub kind: PlotKind,
    pub protected_col: String,
    pub positive_value: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Fit(FitConfig),
    Transform(TransformConfig),
    Evaluate(EvaluateConfig),
    Benchmark(BenchmarkConfig),
    Sweep(SweepConfig),
    Cluster(ClusterConfig),
    Plot(PlotConfig),
}

impl RunConfig {
    pub fn command(&self) -> &'static str {
        match self {
            RunConfig::Fit(_) => "fit",
            RunConfig::Transform(_) => "transform",
            RunConfig::Evaluate(_) => "evaluate",
            RunConfig::Benchmark(_) => "benchmark",
            RunConfig::Sweep(_) => "sweep",
            RunConfig::Cluster(_) => "cluster",
            RunConfig::Plot(_) => "plot",
        }
    }

    pub fn input_files(&self) -> Vec<PathBuf> {
        match self {
            RunConfig::Fit(c) => c.data.input_files(),
            RunConfig::Transform(c) => vec![c.model.clone(), c.input.clone()],
            RunConfig::Evaluate(c) => vec![c.input.clone()],
            RunConfig::Benchmark(c) => c.datasets.iter().flat_map(DataSource::input_files).collect(),
            RunConfig::Sweep(c) => c.data.input_files(),
            RunConfig::Cluster(c) => c.data.input_files(),
            RunConfig::Plot(c) => vec![c.input.clone()],
        }
    }

    /// Every seed the run consumes, sorted and deduplicated.
    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = match self {
            RunConfig::Fit(c) => c.data.seed().into_iter().chain([c.fpca.seed]).collect(),
            RunConfig::Transform(_) => Vec::new(),
            RunConfig::Evaluate(c) => vec![c.options.seed],
            RunConfig::Benchmark(c) => {
                let mut v: Vec<u64> = c.datasets.iter().filter_map(DataSource::seed).collect();
                v.extend((0..c.splits as u64).flat_map(|k| [c.split.seed + k, c.eval.seed + k]));
                v
            }
            RunConfig::Sweep(c) => {
                let mut v: Vec<u64> = c.data.seed().into_iter().collect();
                v.extend((0..c.splits as u64).flat_map(|k| [c.split.seed + k, c.eval.seed + k]));
                v
            }
            RunConfig::Cluster(c) => c.data.seed().into_iter().chain([c.seed]).collect(),
            RunConfig::Plot(c) => vec![c.seed],
        };
        s.sort_unstable();
        s.dedup();
        s
    }
}
