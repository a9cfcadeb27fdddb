//! Command bodies. Each writes its outputs into `out` and returns their file
//! names in a fixed order.

use std::path::Path;

use fairpca::data_io::{self, Dataset, DatasetConfig, SplitSpec};
use fairpca::fairness::{self, EvalOptions, Family};
use fairpca::fpca::{self, FpcaConfig, FpcaModel};
use fairpca::learners;
use rayon::prelude::*;

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::plot;

pub fn execute(config: &RunConfig, out: &Path) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(out)?;
    match config {
        RunConfig::Fit(c) => fit(c, out),
        RunConfig::Transform(c) => transform(c, out),
        RunConfig::Evaluate(c) => evaluate(c, out),
        RunConfig::Benchmark(c) => benchmark(c, out),
        RunConfig::Sweep(c) => sweep(c, out),
        RunConfig::Cluster(c) => cluster(c, out),
        RunConfig::Plot(c) => plot_cmd(c, out),
    }
}

fn write(out: &Path, name: &str, body: &str) -> CliResult<String> {
    std::fs::write(out.join(name), body)?;
    Ok(name.to_string())
}

/// Shortest decimal that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn fit(c: &FitConfig, out: &Path) -> CliResult<Vec<String>> {
    let data = c.data.load()?;
    let model = fpca::fit(&data, &c.fpca)?;
    let diag = serde_json::to_string_pretty(&model.diagnostics).map_err(fairpca::Error::from)?;
    Ok(vec![write(out, "model.json", &model.to_json()?)?, write(out, "diagnostics.json", &diag)?])
}

fn transform(c: &TransformConfig, out: &Path) -> CliResult<Vec<String>> {
    let model = FpcaModel::from_json(&std::fs::read_to_string(&c.model)?)?;
    let (x, z) = match &c.protected_col {
        Some(col) => {
            let mut schema = DatasetConfig::new(&c.input, col, &c.positive_value);
            schema.drop_cols = c.drop_cols.clone();
            let ds = data_io::load_csv(&c.input, &schema)?.dataset;
            (ds.x, Some(ds.z))
        }
        None => (data_io::load_matrix(&c.input, &c.drop_cols)?.0, None),
    };
    let u = fpca::transform(&model, &x)?;
    let mut header: Vec<String> = (1..=u.ncols()).map(|j| format!("pc{j}")).collect();
    if let Some(col) = &c.protected_col {
        header.push(col.clone());
    }
    let rows: Vec<Vec<String>> = (0..u.nrows())
        .map(|i| {
            let mut r: Vec<String> = u.row(i).iter().map(|&v| num(v)).collect();
            if let Some(z) = &z {
                r.push(z[i].to_string());
            }
            r
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(vec![write(out, "reduced.csv", &csv_text(&h, &rows)?)?])
}

fn evaluate(c: &EvaluateConfig, out: &Path) -> CliResult<Vec<String>> {
    let mut schema = DatasetConfig::new(&c.input, &c.protected_col, &c.positive_value);
    schema.drop_cols = c.drop_cols.clone();
    let ds = data_io::load_csv(&c.input, &schema)?.dataset;
    let report = fairness::evaluate(&ds.x, &ds.z, &c.families, &c.options)?;
    Ok(vec![write(out, "report.json", &report.to_json()?)?])
}

/// Measurements of one split.
#[derive(Debug, Clone, Copy)]
pub struct CellResult {
    pub var_explained: f64,
    pub delta_lin: f64,
    pub delta_rbf: Option<f64>,
    pub ks: Option<f64>,
}

/// Fit on the training part, project the test part, estimate on the test part.
pub fn run_split(
    data: &Dataset,
    config: &FpcaConfig,
    split: &SplitSpec,
    eval: &EvalOptions,
    full: bool,
) -> CliResult<CellResult> {
    let (train, test) = data_io::split(data, split)?;
    let model = fpca::fit(&train, config)?;
    let u = fpca::transform(&model, &test.x)?;
    let (delta_lin, _) = fairness::delta_linear_svm(&u, &test.z, eval.folds, eval.seed)?;
    let (delta_rbf, ks) = if full {
        let (r, _) = fairness::delta_kernel_svm(&u, &test.z, eval.folds, eval.seed, eval.kernel_max_rows)?;
        (Some(r), Some(fairness::delta_threshold_family(&u, &test.z)?))
    } else {
        (None, None)
    };
    Ok(CellResult { var_explained: model.diagnostics.explained_variance, delta_lin, delta_rbf, ks })
}

fn split_for(base: &SplitSpec, k: usize) -> SplitSpec {
    SplitSpec { seed: base.seed + k as u64, ..*base }
}

fn eval_for(base: &EvalOptions, k: usize) -> EvalOptions {
    EvalOptions { seed: base.seed + k as u64, ..base.clone() }
}

/// Means over the successful splits and the first failure message, if any.
struct Aggregate {
    ok: usize,
    var: f64,
    lin: f64,
    rbf: f64,
    ks: f64,
    failure: Option<String>,
}

fn aggregate(cells: &[&Result<CellResult, String>]) -> Aggregate {
    let good: Vec<&CellResult> = cells.iter().filter_map(|c| c.as_ref().ok()).collect();
    let failure = cells.iter().find_map(|c| c.as_ref().err().cloned());
    let k = good.len() as f64;
    let mean = |f: &dyn Fn(&CellResult) -> f64| {
        if good.is_empty() {
            f64::NAN
        } else {
            good.iter().map(|c| f(c)).sum::<f64>() / k
        }
    };
    Aggregate {
        ok: good.len(),
        var: mean(&|c| c.var_explained),
        lin: mean(&|c| c.delta_lin),
        rbf: mean(&|c| c.delta_rbf.unwrap_or(f64::NAN)),
        ks: mean(&|c| c.ks.unwrap_or(f64::NAN)),
        failure,
    }
}

fn opt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        num(v)
    }
}

pub const BENCHMARK_COLUMNS: [&str; 8] =
    ["dataset", "variant", "splits_ok", "var_explained", "delta_lin", "delta_rbf", "ks", "failure"];

fn benchmark(c: &BenchmarkConfig, out: &Path) -> CliResult<Vec<String>> {
    if c.datasets.is_empty() {
        return Err(CliError::Config("the benchmark lists no datasets".into()));
    }
    let loaded: Vec<(String, CliResult<Dataset>)> = c.datasets.iter().map(|d| (d.name(), d.load())).collect();
    let cells: Vec<(usize, usize, usize)> = (0..loaded.len())
        .flat_map(|d| (0..c.variants.len()).flat_map(move |v| (0..c.splits).map(move |s| (d, v, s))))
        .filter(|&(d, _, _)| loaded[d].1.is_ok())
        .collect();
    let results: Vec<Result<CellResult, String>> = cells
        .par_iter()
        .map(|&(d, v, s)| {
            let data = loaded[d].1.as_ref().expect("filtered to loaded datasets");
            let cfg = c.fpca.config(c.variants[v]);
            run_split(data, &cfg, &split_for(&c.split, s), &eval_for(&c.eval, s), true).map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::new();
    for (d, (name, ds)) in loaded.iter().enumerate() {
        for (v, variant) in c.variants.iter().enumerate() {
            let mut row = vec![name.clone(), variant.to_string()];
            match ds {
                Err(e) => {
                    let blank = String::new;
                    row.extend(["0".into(), blank(), blank(), blank(), blank(), e.to_string()]);
                }
                Ok(_) => {
                    // cells are generated in split order
                    let mine: Vec<&Result<CellResult, String>> = cells
                        .iter()
                        .zip(&results)
                        .filter(|((dd, vv, _), _)| *dd == d && *vv == v)
                        .map(|(_, r)| r)
                        .collect();
                    let a = aggregate(&mine);
                    row.extend([
                        a.ok.to_string(),
                        opt_num(a.var),
                        opt_num(a.lin),
                        opt_num(a.rbf),
                        opt_num(a.ks),
                        a.failure.unwrap_or_default(),
                    ]);
                }
            }
            rows.push(row);
        }
    }
    Ok(vec![write(out, "benchmark.csv", &csv_text(&BENCHMARK_COLUMNS, &rows)?)?])
}

pub const SWEEP_COLUMNS: [&str; 7] = ["variant", "delta", "mu", "splits_ok", "var_explained", "delta_lin", "failure"];

/// Grid points of a sweep in output order: variant, then delta, then mu.
/// The mean-only variant has no mu axis.
pub fn sweep_points(c: &SweepConfig) -> Vec<(Variant, f64, Option<f64>)> {
    let mut deltas = c.deltas.clone();
    deltas.sort_by(f64::total_cmp);
    let mut mus = c.mus.clone();
    mus.sort_by(f64::total_cmp);
    let mut variants = c.variants.clone();
    variants.sort();
    variants.dedup();
    let mut pts = Vec::new();
    for &v in &variants {
        for &d in &deltas {
            match v {
                Variant::Both => pts.extend(mus.iter().map(|&m| (v, d, Some(m)))),
                Variant::Mean => pts.push((v, d, None)),
                Variant::Unconstrained => {}
            }
        }
        if v == Variant::Unconstrained {
            pts.push((v, f64::INFINITY, None));
        }
    }
    pts
}

pub fn validate_sweep(c: &SweepConfig) -> CliResult<()> {
    if c.deltas.is_empty() || c.mus.is_empty() || c.variants.is_empty() {
        return Err(CliError::Config("sweep grids must be non-empty".into()));
    }
    if c.deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(CliError::Config("delta grid values must be finite and >= 0".into()));
    }
    if c.mus.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(CliError::Config("mu grid values must be finite and >= 0".into()));
    }
    if c.splits == 0 {
        return Err(CliError::Config("at least one split is required".into()));
    }
    Ok(())
}

fn sweep(c: &SweepConfig, out: &Path) -> CliResult<Vec<String>> {
    validate_sweep(c)?;
    let data = c.data.load()?;
    let points = sweep_points(c);
    let cells: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..c.splits).map(move |s| (p, s))).collect();
    let results: Vec<Result<CellResult, String>> = cells
        .par_iter()
        .map(|&(p, s)| {
            let (v, delta, mu) = points[p];
            let cfg = c.fpca.config_with(v, delta, mu.unwrap_or(0.0));
            run_split(&data, &cfg, &split_for(&c.split, s), &eval_for(&c.eval, s), false).map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::new();
    for (p, &(v, delta, mu)) in points.iter().enumerate() {
        let mine: Vec<&Result<CellResult, String>> =
            cells.iter().zip(&results).filter(|((pp, _), _)| *pp == p).map(|(_, r)| r).collect();
        let a = aggregate(&mine);
        rows.push(vec![
            v.to_string(),
            if delta.is_finite() { num(delta) } else { String::new() },
            mu.map(num).unwrap_or_default(),
            a.ok.to_string(),
            opt_num(a.var),
            opt_num(a.lin),
            a.failure.unwrap_or_default(),
        ]);
    }
    Ok(vec![write(out, "sweep.csv", &csv_text(&SWEEP_COLUMNS, &rows)?)?])
}

/// Per-variant clustering outcome.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub variant: Variant,
    pub assignments: Vec<usize>,
    pub composition: Vec<learners::ClusterComposition>,
    pub stddev: f64,
    pub mean_sq_distance: f64,
}

pub fn cluster_variant(data: &Dataset, c: &ClusterConfig, variant: Variant) -> CliResult<ClusterOutcome> {
    let model = fpca::fit(data, &c.fpca.config(variant))?;
    let u = fpca::transform(&model, &data.x)?;
    let km = learners::kmeans(&u, c.k, c.restarts, c.seed)?;
    let composition = learners::cluster_composition(&km.assignments, &data.z, c.k)?;
    let stddev = learners::cluster_composition_stddev(&km.assignments, &data.z, c.k)?;
    let mean_sq_distance = learners::mean_squared_distance(&u, &km.centers, &km.assignments)?;
    Ok(ClusterOutcome { variant, assignments: km.assignments, composition, stddev, mean_sq_distance })
}

fn cluster(c: &ClusterConfig, out: &Path) -> CliResult<Vec<String>> {
    if c.k == 0 {
        return Err(CliError::Config("k must be at least 1".into()));
    }
    if c.variants.is_empty() {
        return Err(CliError::Config("no variants requested".into()));
    }
    let data = c.data.load()?;
    let outcomes: Vec<CliResult<ClusterOutcome>> =
        c.variants.par_iter().map(|&v| cluster_variant(&data, c, v)).collect();
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for o in outcomes {
        let o = o?;
        let rows: Vec<Vec<String>> = o
            .assignments
            .iter()
            .enumerate()
            .map(|(i, a)| vec![i.to_string(), a.to_string(), data.z[i].to_string()])
            .collect();
        files.push(write(out, &format!("clusters_{}.csv", o.variant), &csv_text(&["row", "cluster", "z"], &rows)?)?);
        let comp: Vec<Vec<String>> = o
            .composition
            .iter()
            .map(|r| vec![r.cluster.to_string(), r.size.to_string(), r.n_pos.to_string(), num(r.pct_pos)])
            .collect();
        files.push(write(
            out,
            &format!("composition_{}.csv", o.variant),
            &csv_text(&["cluster", "size", "n_pos", "pct_pos"], &comp)?,
        )?);
        summary.push(vec![o.variant.to_string(), c.k.to_string(), num(o.stddev), num(o.mean_sq_distance)]);
    }
    files.push(write(
        out,
        "cluster_summary.csv",
        &csv_text(&["variant", "k", "composition_stddev", "mean_sq_distance"], &summary)?,
    )?);
    Ok(files)
}

fn plot_cmd(c: &PlotConfig, out: &Path) -> CliResult<Vec<String>> {
    let svg = match c.kind {
        PlotKind::Scatter => {
            let ds = data_io::load_csv(&c.input, &DatasetConfig::new(&c.input, &c.protected_col, &c.positive_value))?
                .dataset;
            if ds.p() != 2 {
                return Err(CliError::Data(format!("scatter plots need 2 columns, got {}", ds.p())));
            }
            let svm = learners::train_linear_svm(&ds.x, &ds.z, &learners::LINEAR_C_GRID, 5, c.seed)?;
            plot::scatter_svg(&ds.x, &ds.z, Some((&svm.w, svm.b)))
        }
        PlotKind::Sweep => plot::sweep_svg(&read_sweep(&c.input)?)?,
    };
    Ok(vec![write(out, "plot.svg", &svg)?])
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub var_explained: f64,
    pub delta_lin: f64,
}

pub fn read_sweep(path: &Path) -> CliResult<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("sweep file lacks column '{name}'")))
    };
    let (cv, cd, cm, cx, cy) = (col("variant")?, col("delta")?, col("mu")?, col("var_explained")?, col("delta_lin")?);
    let parse_opt = |s: &str| -> CliResult<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| CliError::Data(format!("bad number '{s}'")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let (Some(x), Some(y)) = (parse_opt(&rec[cx])?, parse_opt(&rec[cy])?) else {
            continue;
        };
        rows.push(SweepRow {
            variant: rec[cv].to_string(),
            delta: parse_opt(&rec[cd])?,
            mu: parse_opt(&rec[cm])?,
            var_explained: x,
            delta_lin: y,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no plottable rows", path.display())));
    }
    Ok(rows)
}

pub fn default_families() -> Vec<Family> {
    vec![Family::Threshold, Family::LinearSvm, Family::KernelSvm]
}
