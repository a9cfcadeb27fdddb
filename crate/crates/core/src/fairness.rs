//! Empirical Δ-fairness estimators and the high-probability bound.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, KernelSvmModel, LinearSvmModel};

/// Exact-grid limits for the multivariate KS estimator.
pub const EXACT_GRID_MAX_DIM: usize = 3;
pub const EXACT_GRID_MAX_ROWS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Threshold,
    LinearSvm,
    #[serde(rename = "rbf-svm")]
    KernelSvm,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Threshold => "threshold",
            Family::LinearSvm => "linear-svm",
            Family::KernelSvm => "rbf-svm",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Family::Threshold),
            "linear-svm" | "linear" => Ok(Family::LinearSvm),
            "rbf-svm" | "kernel-svm" | "rbf" => Ok(Family::KernelSvm),
            other => Err(Error::InvalidArgument(format!("unknown classifier family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Bound {
    pub vc_dim: usize,
    pub delta_prob: f64,
    pub bound: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierSummary {
    Threshold { exact_grid: bool, evaluation_points: usize },
    LinearSvm { c_reg: f64, cv_accuracy: Option<f64>, w: Vec<f64>, b: f64 },
    KernelSvm { c_reg: f64, bandwidth: f64, cv_accuracy: Option<f64>, support_vectors: usize, train_rows: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub family: Family,
    pub delta_hat: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub summary: ClassifierSummary,
    pub prop2_bound: Option<Prop2Bound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dim: usize,
    pub entries: Vec<FamilyEntry>,
}

impl FairnessReport {
    pub fn get(&self, family: Family) -> Option<&FamilyEntry> {
        self.entries.iter().find(|e| e.family == family)
    }

    pub fn delta_hat(&self, family: Family) -> Option<f64> {
        self.get(family).map(|e| e.delta_hat)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn class_sizes(z: &[i8]) -> Result<(usize, usize)> {
    if z.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::InvalidArgument("protected labels must be +1 or -1".into()));
    }
    let pos = z.iter().filter(|&&l| l == 1).count();
    let neg = z.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateProtectedClass(format!("{pos} positive and {neg} negative rows")));
    }
    Ok((pos, neg))
}

fn check_rows(u: &DMatrix<f64>, z: &[i8]) -> Result<(usize, usize)> {
    if u.nrows() != z.len() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", z.len(), u.nrows())));
    }
    if u.ncols() == 0 {
        return Err(Error::InvalidArgument("reduced data has no columns".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite value in reduced data".into()));
    }
    class_sizes(z)
}

/// Two-sample Kolmogorov–Smirnov statistic. The sweep compares the integer
/// counts `cp * n_neg` and `cn * n_pos`, so ties and equal CDF values are exact.
pub fn ks_univariate(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateProtectedClass(format!(
            "{} positive and {} negative scores",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut a = pos.to_vec();
    let mut b = neg.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (np, nn) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: u128 = 0;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let (l, r) = (i as u128 * nn, j as u128 * np);
        best = best.max(l.abs_diff(r));
    }
    Ok(best as f64 / (np * nn) as f64)
}

fn dense_ranks(col: impl Iterator<Item = f64>) -> (Vec<usize>, usize) {
    let vals: Vec<f64> = col.collect();
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let ranks = vals.iter().map(|v| sorted.partition_point(|s| s < v)).collect();
    (ranks, sorted.len())
}

/// `sup_u |F+(u) - F-(u)|` with componentwise `<=` CDFs. Exact over the full
/// coordinate-value grid when `d <= 3` and `n <= 500`; otherwise the sup is
/// taken over the sample points only (a lower bound).
pub fn delta_threshold_family(u: &DMatrix<f64>, z: &[i8]) -> Result<f64> {
    Ok(threshold_family_detail(u, z)?.0)
}

fn threshold_family_detail(u: &DMatrix<f64>, z: &[i8]) -> Result<(f64, bool, usize)> {
    let (np, nn) = check_rows(u, z)?;
    let (n, d) = u.shape();
    // +n_neg for positives, -n_pos for negatives: prefix sums give the
    // scaled CDF difference
    let weight: Vec<i64> = z.iter().map(|&l| if l == 1 { nn as i64 } else { -(np as i64) }).collect();
    let denom = (np * nn) as f64;
    if d <= EXACT_GRID_MAX_DIM && n <= EXACT_GRID_MAX_ROWS {
        let mut ranks = Vec::with_capacity(3);
        let mut sizes = Vec::with_capacity(3);
        for c in 0..3 {
            if c < d {
                let (r, m) = dense_ranks(u.column(c).iter().copied());
                ranks.push(r);
                sizes.push(m);
            } else {
                ranks.push(vec![0; n]);
                sizes.push(1);
            }
        }
        let (m1, m2, m3) = (sizes[0], sizes[1], sizes[2]);
        let mut by_first: Vec<Vec<usize>> = vec![Vec::new(); m1];
        for i in 0..n {
            by_first[ranks[0][i]].push(i);
        }
        let mut cells = vec![0i64; m2 * m3];
        let mut prefix = vec![0i64; m2 * m3];
        let mut best: i64 = 0;
        for group in &by_first {
            for &i in group {
                cells[ranks[1][i] * m3 + ranks[2][i]] += weight[i];
            }
            for a in 0..m2 {
                let mut row = 0i64;
                for b in 0..m3 {
                    row += cells[a * m3 + b];
                    let above = if a > 0 { prefix[(a - 1) * m3 + b] } else { 0 };
                    let v = row + above;
                    prefix[a * m3 + b] = v;
                    best = best.max(v.abs());
                }
            }
        }
        return Ok((best as f64 / denom, true, m1 * m2 * m3));
    }
    let rows: Vec<Vec<f64>> = u.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut best: i64 = 0;
    for point in &rows {
        let s: i64 =
            rows.iter().zip(&weight).filter(|(r, _)| r.iter().zip(point).all(|(a, b)| a <= b)).map(|(_, w)| w).sum();
        best = best.max(s.abs());
    }
    Ok((best as f64 / denom, false, n))
}

fn split_scores(scores: &[f64], z: &[i8]) -> (Vec<f64>, Vec<f64>) {
    let pos = scores.iter().zip(z).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg = scores.iter().zip(z).filter(|(_, &l)| l == -1).map(|(s, _)| *s).collect();
    (pos, neg)
}

fn check_fold_sizes(z: &[i8], folds: usize) -> Result<()> {
    let (pos, neg) = class_sizes(z)?;
    if pos < folds || neg < folds {
        return Err(Error::DegenerateProtectedClass(format!("class sizes {pos}/{neg} are below {folds} folds")));
    }
    Ok(())
}

/// KS statistic of the decision scores of a CV-tuned linear SVM predicting `z`.
pub fn delta_linear_svm(u: &DMatrix<f64>, z: &[i8], folds: usize, seed: u64) -> Result<(f64, LinearSvmModel)> {
    check_rows(u, z)?;
    check_fold_sizes(z, folds)?;
    let model = learners::train_linear_svm(u, z, &learners::LINEAR_C_GRID, folds, seed)?;
    let (pos, neg) = split_scores(&model.decision(u)?, z);
    Ok((ks_univariate(&pos, &neg)?, model))
}

/// As [`delta_linear_svm`] with a CV-tuned Gaussian-kernel SVM, except that
/// each row is scored out of fold: a narrow Gaussian kernel interpolates its
/// training rows, so in-sample scores would give a KS near 1 on any data.
/// At most `max_rows` rows (seeded, stratified) enter the cross-fitting; the
/// remaining rows are scored by the model refit on those rows.
pub fn delta_kernel_svm(
    u: &DMatrix<f64>,
    z: &[i8],
    folds: usize,
    seed: u64,
    max_rows: usize,
) -> Result<(f64, KernelSvmModel)> {
    check_rows(u, z)?;
    check_fold_sizes(z, folds)?;
    let train = subsample_stratified(z, max_rows, seed);
    let zt: Vec<i8> = train.iter().map(|&i| z[i]).collect();
    check_fold_sizes(&zt, folds)?;
    let ut = u.select_rows(&train);
    let model =
        learners::train_kernel_svm(&ut, &zt, &learners::KERNEL_C_GRID, &learners::BANDWIDTH_MULTIPLIERS, folds, seed)?;
    let fold_of = learners::stratified_folds(&zt, folds, seed);
    let gram = model.kernel.cross_gram(&ut, &ut);
    let oof = learners::cross_fitted_scores(&gram, &zt, &fold_of, folds, model.c_reg)?;
    let mut scores = model.decision(u)?;
    for (k, &i) in train.iter().enumerate() {
        scores[i] = oof[k];
    }
    let (pos, neg) = split_scores(&scores, z);
    Ok((ks_univariate(&pos, &neg)?, model))
}

/// Sorted row indices of a class-proportional subsample of at most `max_rows`.
pub fn subsample_stratified(z: &[i8], max_rows: usize, seed: u64) -> Vec<usize> {
    if z.len() <= max_rows {
        return (0..z.len()).collect();
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(max_rows);
    let pos: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 1).collect();
    let neg: Vec<usize> = (0..z.len()).filter(|&i| z[i] != 1).collect();
    let take_pos = ((max_rows as f64 * pos.len() as f64 / z.len() as f64).round() as usize).clamp(1, pos.len());
    let take_neg = (max_rows - take_pos).min(neg.len());
    for (group, take) in [(&pos, take_pos), (&neg, take_neg)] {
        for k in rand::seq::index::sample(&mut rng, group.len(), take) {
            out.push(group[k]);
        }
    }
    out.sort_unstable();
    out
}

/// `(delta_hat + 8 sqrt(vc_dim / n) + delta_prob, 1 - exp(-n delta_prob^2 / 2))`.
pub fn prop2_bound(delta_hat: f64, n: usize, vc_dim: usize, delta_prob: f64) -> Result<(f64, f64)> {
    if n == 0 || vc_dim == 0 {
        return Err(Error::InvalidArgument(format!("n = {n} and vc_dim = {vc_dim} must be positive")));
    }
    if !(delta_prob > 0.0 && delta_prob.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta_prob = {delta_prob} must be positive")));
    }
    if !(0.0..=1.0).contains(&delta_hat) {
        return Err(Error::InvalidArgument(format!("delta_hat = {delta_hat} outside [0, 1]")));
    }
    let bound = delta_hat + 8.0 * (vc_dim as f64 / n as f64).sqrt() + delta_prob;
    let below_one = f64::from_bits(1.0f64.to_bits() - 1);
    let confidence = (-(-(n as f64) * delta_prob * delta_prob / 2.0).exp_m1()).clamp(0.0, below_one);
    Ok((bound, confidence))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub folds: usize,
    pub seed: u64,
    /// Slack `delta` of the high-probability bound; `None` skips the bound.
    pub delta_prob: Option<f64>,
    pub kernel_max_rows: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { folds: 5, seed: 0, delta_prob: Some(0.05), kernel_max_rows: 2000 }
    }
}

/// Runs the requested estimators on reduced data `u`. Threshold and linear
/// families carry the bound with VC dimension `d + 1`; the Gaussian-kernel
/// family has no finite VC dimension and gets none.
pub fn evaluate(u: &DMatrix<f64>, z: &[i8], families: &[Family], options: &EvalOptions) -> Result<FairnessReport> {
    let (n_pos, n_neg) = check_rows(u, z)?;
    let n = u.nrows();
    let d = u.ncols();
    let mut fams = families.to_vec();
    fams.sort();
    fams.dedup();
    let mut entries = Vec::with_capacity(fams.len());
    for family in fams {
        let (delta_hat, summary) = match family {
            Family::Threshold => {
                let (v, exact, pts) = threshold_family_detail(u, z)?;
                (v, ClassifierSummary::Threshold { exact_grid: exact, evaluation_points: pts })
            }
            Family::LinearSvm => {
                let (v, m) = delta_linear_svm(u, z, options.folds, options.seed)?;
                (v, ClassifierSummary::LinearSvm { c_reg: m.c_reg, cv_accuracy: m.cv_accuracy, w: m.w, b: m.b })
            }
            Family::KernelSvm => {
                let (v, m) = delta_kernel_svm(u, z, options.folds, options.seed, options.kernel_max_rows)?;
                let bandwidth = match m.kernel {
                    crate::fpca::KernelSpec::Gaussian { bandwidth } => bandwidth,
                    _ => f64::NAN,
                };
                let support_vectors = m.alpha.iter().filter(|&&a| a > 0.0).count();
                (
                    v,
                    ClassifierSummary::KernelSvm {
                        c_reg: m.c_reg,
                        bandwidth,
                        cv_accuracy: m.cv_accuracy,
                        support_vectors,
                        train_rows: m.train_rows.len(),
                    },
                )
            }
        };
        let prop2_bound = match (family, options.delta_prob) {
            (Family::KernelSvm, _) | (_, None) => None,
            (_, Some(dp)) => {
                let (bound, confidence) = prop2_bound(delta_hat, n, d + 1, dp)?;
                Some(Prop2Bound { vc_dim: d + 1, delta_prob: dp, bound, confidence })
            }
        };
        entries.push(FamilyEntry { family, delta_hat, n_pos, n_neg, summary, prop2_bound });
    }
    Ok(FairnessReport { dim: d, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_univariate(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 1.0);
        assert_eq!(ks_univariate(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(ks_univariate(&[2.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(ks_univariate(&[], &[1.0]), Err(Error::DegenerateProtectedClass(_))));
    }

    #[test]
    fn threshold_family_one_dim_is_ks() {
        let u = DMatrix::from_column_slice(6, 1, &[0.3, 1.2, -0.5, 0.9, 2.0, 0.1]);
        let z = [1, -1, 1, -1, -1, 1];
        let ks = ks_univariate(&[0.3, -0.5, 0.1], &[1.2, 0.9, 2.0]).unwrap();
        assert_eq!(delta_threshold_family(&u, &z).unwrap(), ks);
    }

    #[test]
    fn opposite_quadrants_separate_fully() {
        let u = DMatrix::from_row_slice(
            8,
            2,
            &[1.0, 1.0, 2.0, 1.5, 1.5, 2.0, 3.0, 3.0, -1.0, -1.0, -2.0, -1.5, -1.5, -2.0, -3.0, -3.0],
        );
        let z = [1, 1, 1, 1, -1, -1, -1, -1];
        assert_eq!(delta_threshold_family(&u, &z).unwrap(), 1.0);
    }

    #[test]
    fn bound_example() {
        let (b, c) = prop2_bound(0.0, 10_000, 4, 0.05).unwrap();
        assert!((b - 0.21).abs() < 1e-12);
        assert!((c - (1.0 - (-12.5f64).exp())).abs() < 1e-15);
        assert!(prop2_bound(0.0, 0, 4, 0.05).is_err());
        assert!(prop2_bound(0.0, 10, 4, 0.0).is_err());
        assert!(prop2_bound(0.0, usize::MAX, 1, 1.0).unwrap().1 < 1.0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in [Family::Threshold, Family::LinearSvm, Family::KernelSvm] {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
    }
}
