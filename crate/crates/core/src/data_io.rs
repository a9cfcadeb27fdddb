//! Datasets: CSV loading, normalization, stratified splits and the synthetic
//! generators used by the experiments.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SymMatrix};

/// Feature matrix with a ±1 protected label and an optional ±1 main label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub z: Vec<i8>,
    pub y: Option<Vec<i8>>,
    pub feature_names: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        z: Vec<i8>,
        y: Option<Vec<i8>>,
        feature_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self { x, z, y, feature_names, provenance: provenance.into() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset("no rows".into()));
        }
        if n < 2 {
            return Err(Error::EmptyDataset("a dataset needs at least two rows".into()));
        }
        if self.z.len() != n || self.y.as_ref().is_some_and(|y| y.len() != n) {
            return Err(Error::DimensionMismatch(format!("label vectors do not match the {n} rows")));
        }
        if self.feature_names.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.x.ncols()
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite feature value".into()));
        }
        if self.z.iter().chain(self.y.iter().flatten()).any(|&v| v != 1 && v != -1) {
            return Err(Error::SchemaError("labels must be +1 or -1".into()));
        }
        let (pos, neg) = self.class_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateProtectedClass(format!("class sizes {pos}/{neg}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `(#z=+1, #z=-1)`
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.z.iter().filter(|&&v| v == 1).count();
        (pos, self.z.len() - pos)
    }

    /// Rows at `indices`, in that order. The result is not re-validated.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            z: indices.iter().map(|&i| self.z[i]).collect(),
            y: self.y.as_ref().map(|y| indices.iter().map(|&i| y[i]).collect()),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Dataset description: which columns carry the labels and which to ignore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub protected_col: String,
    /// Raw value of the protected column mapped to +1; every other value maps to -1.
    #[serde(default = "default_positive")]
    pub positive_value: String,
    /// When set, a numeric protected value above this threshold maps to +1
    /// and `positive_value` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_above: Option<f64>,
    #[serde(default)]
    pub label_col: Option<String>,
    #[serde(default)]
    pub label_positive_value: Option<String>,
    #[serde(default)]
    pub drop_cols: Vec<String>,
    /// Optional display name.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_positive() -> String {
    "1".into()
}

impl DatasetConfig {
    pub fn new(path: impl Into<PathBuf>, protected_col: &str, positive_value: &str) -> Self {
        Self {
            path: path.into(),
            protected_col: protected_col.into(),
            positive_value: positive_value.into(),
            positive_above: None,
            label_col: None,
            label_positive_value: None,
            drop_cols: Vec::new(),
            name: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: DatasetConfig = serde_json::from_str(&text)?;
        // relative data paths are resolved against the config's directory
        if cfg.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.path = dir.join(&cfg.path);
            }
        }
        Ok(cfg)
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn is_missing(v: &str) -> bool {
    matches!(v, "" | "NA" | "N/A" | "NaN" | "nan" | "?" | "null")
}

fn matches_value(raw: &str, want: &str) -> bool {
    if raw == want {
        return true;
    }
    match (raw.parse::<f64>(), want.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Reads a headed CSV. Rows with a missing value in any used column are dropped.
pub fn load_csv(path: &Path, schema: &DatasetConfig) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let col =
        |name: &str| index.get(name).copied().ok_or_else(|| Error::SchemaError(format!("column '{name}' not found")));
    let z_col = col(&schema.protected_col)?;
    let y_col = schema.label_col.as_deref().map(col).transpose()?;
    for d in &schema.drop_cols {
        col(d)?;
    }
    if y_col.is_some() && schema.label_positive_value.is_none() {
        return Err(Error::SchemaError("label column given without a positive value".into()));
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != z_col && Some(i) != y_col && !schema.drop_cols.contains(&headers[i]))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::SchemaError("no feature columns left".into()));
    }

    let mut data = Vec::new();
    let mut z = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0;
    let mut n_rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        n_rows += 1;
        let used = feature_cols.iter().chain(std::iter::once(&z_col)).chain(y_col.iter());
        if used.clone().any(|&i| record.get(i).map_or(true, is_missing)) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(feature_cols.len());
        for &i in &feature_cols {
            let raw = &record[i];
            let v: f64 = raw.parse().map_err(|_| {
                Error::SchemaError(format!("non-numeric value '{raw}' in column '{}' (row {})", headers[i], line + 1))
            })?;
            row.push(v);
        }
        if row.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        data.extend(row);
        let positive = match schema.positive_above {
            Some(t) => {
                let raw = &record[z_col];
                let v: f64 = raw.parse().map_err(|_| {
                    Error::SchemaError(format!("non-numeric protected value '{raw}' (row {})", line + 1))
                })?;
                v > t
            }
            None => matches_value(&record[z_col], &schema.positive_value),
        };
        z.push(if positive { 1 } else { -1 });
        if let (Some(c), Some(pv)) = (y_col, schema.label_positive_value.as_deref()) {
            y.push(if matches_value(&record[c], pv) { 1 } else { -1 });
        }
    }
    if z.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no usable rows out of {n_rows}", path.display())));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values from {}", path.display());
    }
    let x = DMatrix::from_row_slice(z.len(), feature_cols.len(), &data);
    let names = feature_cols.iter().map(|&i| headers[i].clone()).collect();
    let dataset = Dataset::new(x, z, y_col.map(|_| y), names, path.display().to_string())?;
    Ok(LoadReport { dataset, dropped_rows: dropped })
}

/// Reads every column not in `drop_cols` as a numeric feature. Rows with a
/// missing value are dropped; returns the matrix and its column names.
pub fn load_matrix(path: &Path, drop_cols: &[String]) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    for d in drop_cols {
        if !headers.contains(d) {
            return Err(Error::SchemaError(format!("column '{d}' not found")));
        }
    }
    let cols: Vec<usize> = (0..headers.len()).filter(|&i| !drop_cols.contains(&headers[i])).collect();
    if cols.is_empty() {
        return Err(Error::SchemaError("no feature columns left".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if cols.iter().any(|&i| record.get(i).map_or(true, is_missing)) {
            continue;
        }
        for &i in &cols {
            let raw = &record[i];
            data.push(raw.parse::<f64>().map_err(|_| {
                Error::SchemaError(format!("non-numeric value '{raw}' in column '{}' (row {})", headers[i], line + 1))
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyDataset(format!("{} has no usable rows", path.display())));
    }
    let names = cols.iter().map(|&i| headers[i].clone()).collect();
    Ok((DMatrix::from_row_slice(rows, cols.len(), &data), names))
}

/// Writes features, then `protected_col` and (when present) `label_col`, as ±1.
/// Values use the shortest decimal form that parses back to the same bits.
pub fn save_csv(dataset: &Dataset, path: &Path, protected_col: &str, label_col: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(protected_col);
    if dataset.y.is_some() {
        header.push(label_col);
    }
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut row: Vec<String> = dataset.x.row(i).iter().map(|v| format!("{v}")).collect();
        row.push(dataset.z[i].to_string());
        if let Some(y) = &dataset.y {
            row.push(y[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Column selection, centering and scaling learned on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_dim: usize,
    pub kept_columns: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Normalization {
    /// Learns the transform: drops constant columns, then centers and (if
    /// `standardize`) divides by the sample standard deviation.
    pub fn fit(x: &DMatrix<f64>, standardize: bool) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::EmptyDataset("normalization needs at least two rows".into()));
        }
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for j in 0..p {
            let col = x.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                log::warn!("dropping constant column {j}");
                continue;
            }
            kept.push(j);
            means.push(mean);
            scales.push(if standardize { sd } else { 1.0 });
        }
        if kept.is_empty() {
            return Err(Error::DegenerateFeatures);
        }
        Ok(Self { input_dim: p, kept_columns: kept, means, scales })
    }

    pub fn output_dim(&self) -> usize {
        self.kept_columns.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!("expected {} columns, got {}", self.input_dim, x.ncols())));
        }
        let mut out = x.select_columns(&self.kept_columns);
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            col.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<DVector<f64>> {
        let m = DMatrix::from_row_slice(1, row.len(), row);
        Ok(self.apply(&m)?.row(0).transpose())
    }
}

/// Centers each column and scales it to unit sample variance; constant
/// columns are dropped.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, Normalization)> {
    let norm = Normalization::fit(&dataset.x, true)?;
    let x = norm.apply(&dataset.x)?;
    let names = norm.kept_columns.iter().map(|&j| dataset.feature_names[j].clone()).collect();
    let out = Dataset { x, feature_names: names, ..dataset.clone() };
    Ok((out, norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.7, seed: 0, stratify: true }
    }
}

/// Seeded train/test partition. With stratification each protected class is
/// split separately, quotas fixed by largest remainder so the totals match.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let n = dataset.n();
    let n_train = ((n as f64) * spec.train_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    if spec.stratify {
        let mut groups: Vec<Vec<usize>> =
            [1i8, -1].iter().map(|&c| (0..n).filter(|&i| dataset.z[i] == c).collect()).collect();
        let quotas: Vec<f64> = groups.iter().map(|g| g.len() as f64 * spec.train_fraction).collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
        let mut remaining = n_train.saturating_sub(take.iter().sum());
        for &g in order.iter().cycle().take(order.len() * 2) {
            if remaining == 0 {
                break;
            }
            if take[g] < groups[g].len() {
                take[g] += 1;
                remaining -= 1;
            }
        }
        for (g, k) in groups.iter_mut().zip(&take) {
            if *k == 0 || *k == g.len() {
                return Err(Error::StratificationError(format!(
                    "a protected class of size {} cannot be split {}/{}",
                    g.len(),
                    k,
                    g.len() - k
                )));
            }
            g.shuffle(&mut rng);
            train.extend_from_slice(&g[..*k]);
            test.extend_from_slice(&g[*k..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let (tr, te) = (dataset.subset(&train), dataset.subset(&test));
    for part in [&tr, &te] {
        let (p, q) = part.class_counts();
        if p == 0 || q == 0 {
            return Err(Error::StratificationError("a split side lacks one protected class".into()));
        }
    }
    Ok((tr, te))
}

/// Parameters of the two-class Gaussian generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoGaussianParams {
    pub n_per_class: usize,
    pub mean_plus: Vec<f64>,
    pub mean_minus: Vec<f64>,
    /// Row-major covariance matrices.
    pub cov_plus: Vec<Vec<f64>>,
    pub cov_minus: Vec<Vec<f64>>,
}

impl Default for TwoGaussianParams {
    /// Three correlated features. The classes are shifted along (1, 1, 0) and
    /// their covariances differ only along that direction, so an unconstrained
    /// 2-D projection keeps the class gap while its orthogonal complement
    /// carries no class information.
    fn default() -> Self {
        Self {
            n_per_class: 1000,
            mean_plus: vec![0.8, 0.8, 0.0],
            mean_minus: vec![-0.8, -0.8, 0.0],
            cov_plus: vec![vec![1.15, 0.65, 0.0], vec![0.65, 1.15, 0.0], vec![0.0, 0.0, 1.0]],
            cov_minus: vec![vec![0.85, 0.35, 0.0], vec![0.35, 0.85, 0.0], vec![0.0, 0.0, 1.0]],
        }
    }
}

fn gaussian_sampler(mean: &[f64], cov: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = mean.len();
    if cov.len() != p || cov.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidArgument(format!("covariance is not {p}x{p}")));
    }
    let flat: Vec<f64> = cov.iter().flatten().copied().collect();
    let m = DMatrix::from_row_slice(p, p, &flat);
    if crate::linalg::max_abs(&(&m - m.transpose())) > 1e-12 {
        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
    }
    let root = psd_sqrt(&SymMatrix::from_symmetrized(&m)?, 1e-12)
        .map_err(|e| Error::InvalidArgument(format!("covariance is not PSD: {e}")))?;
    Ok((DVector::from_column_slice(mean), root))
}

/// Samples `n_per_class` points from each of two multivariate Gaussians.
/// Rows are ordered class +1 first.
pub fn synth_two_gaussians(params: &TwoGaussianParams, seed: u64) -> Result<Dataset> {
    if params.n_per_class == 0 {
        return Err(Error::EmptyDataset("n_per_class is zero".into()));
    }
    if params.mean_plus.len() != params.mean_minus.len() || params.mean_plus.is_empty() {
        return Err(Error::InvalidArgument("class means must have the same positive length".into()));
    }
    let p = params.mean_plus.len();
    let samplers = [
        gaussian_sampler(&params.mean_plus, &params.cov_plus)?,
        gaussian_sampler(&params.mean_minus, &params.cov_minus)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * params.n_per_class;
    let mut x = DMatrix::zeros(n, p);
    let mut z = Vec::with_capacity(n);
    for (c, (mean, root)) in samplers.iter().enumerate() {
        for k in 0..params.n_per_class {
            let g = DVector::from_fn(root.ncols(), |_, _| StandardNormal.sample(&mut rng));
            let v = mean + root * g;
            x.set_row(c * params.n_per_class + k, &v.transpose());
            z.push(if c == 0 { 1 } else { -1 });
        }
    }
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Dataset::new(x, z, None, names, format!("synthetic two-gaussian seed={seed}"))
}

/// Template probabilities `[flat, morning, evening]` for each age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeMix {
    pub older: [f64; 3],
    pub younger: [f64; 3],
    /// Probability that an individual is in the older (+1) group.
    pub older_fraction: f64,
}

impl AgeMix {
    /// Older individuals lean towards morning activity, younger towards evening.
    pub fn correlated() -> Self {
        Self { older: [1.0 / 3.0, 0.5, 1.0 / 6.0], younger: [1.0 / 3.0, 1.0 / 6.0, 0.5], older_fraction: 0.5 }
    }

    pub fn uncorrelated() -> Self {
        Self { older: [1.0 / 3.0; 3], younger: [1.0 / 3.0; 3], older_fraction: 0.5 }
    }

    fn validate(&self) -> Result<()> {
        for w in [&self.older, &self.younger] {
            if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("mixture weights {w:?} must be a distribution")));
            }
        }
        if !(self.older_fraction > 0.0 && self.older_fraction < 1.0) {
            return Err(Error::InvalidArgument("older_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for AgeMix {
    fn default() -> Self {
        Self::correlated()
    }
}

pub const ACTIVITY_TEMPLATES: [&str; 3] = ["flat", "morning", "evening"];

/// Mean daily activity for a template over `buckets` equal slices of the day.
pub fn activity_template(kind: usize, buckets: usize) -> Vec<f64> {
    (0..buckets)
        .map(|b| {
            let hour = 24.0 * (b as f64 + 0.5) / buckets as f64;
            let awake = 1.0 / (1.0 + (-(hour - 6.5) * 2.0).exp()) * 1.0 / (1.0 + ((hour - 22.5) * 2.0).exp());
            let bump = |center: f64| 2.0 * (-(hour - center).powi(2) / (2.0 * 2.0_f64.powi(2))).exp();
            0.2 + match kind {
                0 => 1.0 * awake,
                1 => 0.5 * awake + bump(8.0),
                _ => 0.5 * awake + bump(19.0),
            }
        })
        .collect()
}

/// Synthetic per-individual daily activity profiles.
///
/// Each individual follows one of three templates (flat, morning-active,
/// evening-active) scaled by a personal amplitude and perturbed by bucket
/// noise. Template choice depends on the age group through `age_mix`; the
/// amplitude does not. `z = +1` marks the older group and `y` holds the
/// template index mapped to ±1 (+1 for the flat template).
pub fn synth_activity_profiles(n: usize, buckets: usize, age_mix: &AgeMix, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDataset("n is zero".into()));
    }
    if buckets < 2 {
        return Err(Error::InvalidArgument("at least two buckets are required".into()));
    }
    age_mix.validate()?;
    let templates: Vec<Vec<f64>> = (0..3).map(|k| activity_template(k, buckets)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, buckets);
    let mut z = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for i in 0..n {
        let older = rng.gen::<f64>() < age_mix.older_fraction;
        let w = if older { &age_mix.older } else { &age_mix.younger };
        let u: f64 = rng.gen();
        let kind = if u < w[0] {
            0
        } else if u < w[0] + w[1] {
            1
        } else {
            2
        };
        let g: f64 = StandardNormal.sample(&mut rng);
        let amplitude = (1.0 + 0.15 * g).max(0.2);
        for b in 0..buckets {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, b)] = amplitude * templates[kind][b] + 0.3 * e;
        }
        z.push(if older { 1 } else { -1 });
        kinds.push(kind);
    }
    let y = kinds.iter().map(|&k| if k == 0 { 1 } else { -1 }).collect();
    let names = (0..buckets).map(|b| format!("bucket{b:02}")).collect();
    let ds = Dataset::new(x, z, Some(y), names, format!("synthetic activity profiles seed={seed}"))?;
    Ok((ds, kinds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn protected_values_are_mapped() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.csv", "a,sex\n1,M\n2,F\n3,M\n");
        let r = load_csv(&path, &DatasetConfig::new(&path, "sex", "M")).unwrap();
        assert_eq!(r.dataset.z, vec![1, -1, 1]);
        assert_eq!(r.dataset.feature_names, vec!["a"]);
    }

    #[test]
    fn numeric_threshold_maps_protected_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "t.csv", "a,age\n1,20\n2,28\n3,41\n");
        let mut cfg = DatasetConfig::new(&path, "age", "ignored");
        cfg.positive_above = Some(28.0);
        assert_eq!(load_csv(&path, &cfg).unwrap().dataset.z, vec![-1, -1, 1]);
    }

    #[test]
    fn missing_rows_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.csv", "a,b,g\n1,2,x\n,,\n3,4,y\n5,6,x\n");
        let r = load_csv(&path, &DatasetConfig::new(&path, "g", "x")).unwrap();
        assert_eq!(r.dataset.n(), 3);
        assert_eq!(r.dropped_rows, 1);
    }

    #[test]
    fn matrix_loader_keeps_all_numeric_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "m.csv", "a,b,c\n1,2,3\n4,,6\n7,8,9\n");
        let (x, names) = load_matrix(&path, &["b".to_string()]).unwrap();
        assert_eq!(names, vec!["a", "c"]);
        assert_eq!(x, DMatrix::from_row_slice(3, 2, &[1.0, 3.0, 4.0, 6.0, 7.0, 9.0]));
        assert!(matches!(load_matrix(&path, &["zz".to_string()]), Err(Error::SchemaError(_))));
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.csv", "a,g\n1,x\n2,y\n");
        assert!(matches!(load_csv(&path, &DatasetConfig::new(&path, "nope", "x")), Err(Error::SchemaError(_))));
        let empty = write(dir.path(), "b.csv", "a,g\n,x\n");
        assert!(matches!(load_csv(&empty, &DatasetConfig::new(&empty, "g", "x")), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_two_gaussians(&TwoGaussianParams { n_per_class: 20, ..Default::default() }, 5).unwrap();
        let path = dir.path().join("round.csv");
        save_csv(&ds, &path, "z", "y").unwrap();
        let back = load_csv(&path, &DatasetConfig::new(&path, "z", "1")).unwrap().dataset;
        assert_eq!(back.x, ds.x);
        assert_eq!(back.z, ds.z);
    }

    #[test]
    fn normalize_hand_example() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 1.0, 4.0, 1.0]);
        let ds = Dataset::new(x, vec![1, -1, 1], None, vec!["a".into(), "c".into()], "t").unwrap();
        let (out, norm) = normalize(&ds).unwrap();
        assert_eq!(out.p(), 1);
        assert_eq!(norm.kept_columns, vec![0]);
        let want = [-1.0, 0.0, 1.0];
        for (v, w) in out.x.iter().zip(want) {
            assert!((v - w).abs() < 1e-12, "{v}");
        }
        let all_constant =
            Dataset::new(DMatrix::from_element(3, 1, 2.0), vec![1, -1, 1], None, vec!["a".into()], "t").unwrap();
        assert!(matches!(normalize(&all_constant), Err(Error::DegenerateFeatures)));
    }

    #[test]
    fn split_sizes_and_stratification() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let z = vec![1, 1, 1, 1, 1, -1, -1, -1, -1, -1];
        let ds = Dataset::new(x, z, None, vec!["a".into()], "t").unwrap();
        let (tr, te) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((tr.n(), te.n()), (7, 3));
        let (tr2, _) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(tr, tr2);

        let z: Vec<i8> = (0..100).map(|i| if i < 80 { 1 } else { -1 }).collect();
        let ds = Dataset::new(DMatrix::from_fn(100, 1, |i, _| i as f64), z, None, vec!["a".into()], "t").unwrap();
        let (tr, te) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(tr.class_counts(), (56, 14));
        assert_eq!(te.class_counts(), (24, 6));
    }

    #[test]
    fn split_rejects_tiny_class() {
        let z = vec![1, 1, 1, 1, -1];
        let ds = Dataset::new(DMatrix::from_fn(5, 1, |i, _| i as f64), z, None, vec!["a".into()], "t").unwrap();
        assert!(matches!(split(&ds, &SplitSpec::default()), Err(Error::StratificationError(_))));
    }

    #[test]
    fn generators_are_deterministic() {
        let p = TwoGaussianParams { n_per_class: 50, ..Default::default() };
        assert_eq!(synth_two_gaussians(&p, 1).unwrap(), synth_two_gaussians(&p, 1).unwrap());
        assert_ne!(synth_two_gaussians(&p, 1).unwrap(), synth_two_gaussians(&p, 2).unwrap());
        let a = synth_activity_profiles(40, 72, &AgeMix::default(), 3).unwrap();
        assert_eq!(a, synth_activity_profiles(40, 72, &AgeMix::default(), 3).unwrap());
        assert!(matches!(synth_activity_profiles(0, 72, &AgeMix::default(), 3), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let p = TwoGaussianParams {
            cov_plus: vec![vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            ..Default::default()
        };
        assert!(matches!(synth_two_gaussians(&p, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sample_mean_gap_within_three_standard_errors() {
        let p = TwoGaussianParams::default();
        let ds = synth_two_gaussians(&p, 11).unwrap();
        let n = p.n_per_class;
        for j in 0..3 {
            let mp: f64 = (0..n).map(|i| ds.x[(i, j)]).sum::<f64>() / n as f64;
            let mm: f64 = (n..2 * n).map(|i| ds.x[(i, j)]).sum::<f64>() / n as f64;
            let se = ((p.cov_plus[j][j] + p.cov_minus[j][j]) / n as f64).sqrt();
            let want = p.mean_plus[j] - p.mean_minus[j];
            assert!(((mp - mm) - want).abs() <= 3.0 * se, "coordinate {j}");
        }
    }
}
