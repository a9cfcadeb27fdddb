//! Small deterministic learners for the evaluation pipeline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::KernelSpec;

/// Regularization grid `10^-3 .. 10^3` in decade steps.
pub const LINEAR_C_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
pub const KERNEL_C_GRID: [f64; 3] = [0.1, 1.0, 10.0];
pub const BANDWIDTH_MULTIPLIERS: [f64; 3] = [0.25, 1.0, 4.0];

fn check_labels(labels: &[i8], n: usize) -> Result<(usize, usize)> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::DegenerateLabels(format!("{pos} positive of {n}")));
    }
    Ok((pos, n - pos))
}

/// Fold index per row, stratified by label and shuffled with `seed`.
pub fn stratified_folds(labels: &[i8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    for class in [1i8, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            out[i] = k % folds;
        }
    }
    out
}

fn check_folds(labels: &[i8], folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least two folds".into()));
    }
    let (pos, neg) = check_labels(labels, labels.len())?;
    if pos < folds || neg < folds {
        return Err(Error::DegenerateLabels(format!("class sizes {pos}/{neg} are below {folds} folds")));
    }
    Ok(())
}

fn accuracy(scores: &[f64], labels: &[i8]) -> f64 {
    let hits = scores.iter().zip(labels).filter(|(s, &l)| (**s >= 0.0) == (l == 1)).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c_reg: f64,
    #[serde(default)]
    pub cv_accuracy: Option<f64>,
}

impl LinearSvmModel {
    pub fn decision(&self, u: &DMatrix<f64>) -> Result<Vec<f64>> {
        if u.ncols() != self.w.len() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} weights, data {} columns",
                self.w.len(),
                u.ncols()
            )));
        }
        Ok(u.row_iter().map(|r| r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b).collect())
    }
}

/// Soft-margin linear SVM, `min |w|^2/2 + b^2/2 + (C/n) sum hinge(y (w.u + b))`,
/// solved in the dual by coordinate descent. The bias is learned as the
/// weight of a constant feature.
pub fn fit_linear_svm(u: &DMatrix<f64>, labels: &[i8], c: f64, seed: u64) -> Result<LinearSvmModel> {
    let (n, p) = u.shape();
    check_labels(labels, n)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization {c} must be positive")));
    }
    let rows: Vec<Vec<f64>> = u.row_iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
    let qd: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let ub = c / n as f64;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; p + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _epoch in 0..5000 {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let y = labels[i] as f64;
            let g = y * rows[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == ub {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-14 && qd[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, ub);
                let step = (alpha[i] - old) * y;
                for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                    *wj += step * xj;
                }
            }
        }
        if pg_max - pg_min < 1e-8 {
            break;
        }
    }
    let b = w.pop().unwrap_or(0.0);
    Ok(LinearSvmModel { w, b, c_reg: c, cv_accuracy: None })
}

/// Picks `C` from `c_grid` by stratified k-fold accuracy (ties go to the
/// smaller value) and refits on all rows.
pub fn train_linear_svm(
    u: &DMatrix<f64>,
    labels: &[i8],
    c_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LinearSvmModel> {
    check_folds(labels, folds)?;
    if u.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", labels.len(), u.nrows())));
    }
    let fold_of = stratified_folds(labels, folds, seed);
    let mut grid = c_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &c in &grid {
        let mut correct = 0.0;
        for f in 0..folds {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            let yt: Vec<i8> = train.iter().map(|&i| labels[i]).collect();
            let m = fit_linear_svm(&u.select_rows(&train), &yt, c, seed)?;
            let s = m.decision(&u.select_rows(&test))?;
            let yv: Vec<i8> = test.iter().map(|&i| labels[i]).collect();
            correct += accuracy(&s, &yv) * test.len() as f64;
        }
        let acc = correct / labels.len() as f64;
        if best.map_or(true, |(_, a)| acc > a) {
            best = Some((c, acc));
        }
    }
    let (c, acc) = best.ok_or_else(|| Error::InvalidArgument("empty regularization grid".into()))?;
    let mut model = fit_linear_svm(u, labels, c, seed)?;
    model.cv_accuracy = Some(acc);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSvmModel {
    /// Dual coefficients, `0 <= alpha_i <= C`.
    pub alpha: Vec<f64>,
    pub labels: Vec<i8>,
    pub bias: f64,
    pub c_reg: f64,
    pub kernel: KernelSpec,
    pub train_rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub cv_accuracy: Option<f64>,
}

impl KernelSvmModel {
    pub fn decision(&self, u: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.train_rows.first().map_or(0, Vec::len);
        if u.ncols() != p {
            return Err(Error::DimensionMismatch(format!("model expects {p} columns, data has {}", u.ncols())));
        }
        let sv: Vec<usize> = (0..self.alpha.len()).filter(|&i| self.alpha[i] > 0.0).collect();
        Ok(u.row_iter()
            .map(|r| {
                let x: Vec<f64> = r.iter().copied().collect();
                sv.iter()
                    .map(|&i| self.alpha[i] * self.labels[i] as f64 * self.kernel.eval(&self.train_rows[i], &x))
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }
}

/// Dual SVM with box `[0, C]` on a precomputed Gram matrix, solved by
/// maximal-violating-pair updates until the KKT violation drops below `tol`.
/// Returns `(alpha, bias)`.
pub fn smo(gram: &DMatrix<f64>, labels: &[i8], c: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = labels.len();
    if gram.shape() != (n, n) {
        return Err(Error::DimensionMismatch("Gram matrix does not match labels".into()));
    }
    check_labels(labels, n)?;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let q = |i: usize, j: usize| y[i] * y[j] * gram[(i, j)];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = 100_000.max(200 * n);
    for _ in 0..max_iter {
        // i maximizes -y G over I_up, j minimizes it over I_low
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] < 0.0 && alpha[t] < c) || (y[t] > 0.0 && alpha[t] > 0.0);
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    // bias from free vectors, or the midpoint of the feasible interval
    let mut free_sum = 0.0;
    let mut free = 0;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        0.5 * (ub + lb)
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };
    Ok((alpha, -rho))
}

pub fn fit_kernel_svm(u: &DMatrix<f64>, labels: &[i8], kernel: &KernelSpec, c: f64) -> Result<KernelSvmModel> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization {c} must be positive")));
    }
    kernel.validate()?;
    let gram = kernel.cross_gram(u, u);
    let (alpha, bias) = smo(&gram, labels, c, 1e-3)?;
    Ok(KernelSvmModel {
        alpha,
        labels: labels.to_vec(),
        bias,
        c_reg: c,
        kernel: kernel.clone(),
        train_rows: u.row_iter().map(|r| r.iter().copied().collect()).collect(),
        cv_accuracy: None,
    })
}

/// Out-of-fold decision values: each row is scored by the dual SVM trained
/// on the other folds of the precomputed Gram matrix.
pub fn cross_fitted_scores(
    gram: &DMatrix<f64>,
    labels: &[i8],
    fold_of: &[usize],
    folds: usize,
    c: f64,
) -> Result<Vec<f64>> {
    let n = labels.len();
    if gram.shape() != (n, n) || fold_of.len() != n {
        return Err(Error::DimensionMismatch("Gram matrix, labels and folds disagree".into()));
    }
    let mut scores = vec![0.0; n];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let yt: Vec<i8> = train.iter().map(|&i| labels[i]).collect();
        let g = gram.select_rows(&train).select_columns(&train);
        let (alpha, bias) = smo(&g, &yt, c, 1e-3)?;
        for &t in &test {
            scores[t] =
                train.iter().enumerate().map(|(a, &s)| alpha[a] * yt[a] as f64 * gram[(s, t)]).sum::<f64>() + bias;
        }
    }
    Ok(scores)
}

/// Median pairwise Euclidean distance, over a seeded subsample of at most
/// 1000 rows.
pub fn median_heuristic(u: &DMatrix<f64>, seed: u64) -> f64 {
    let n = u.nrows();
    let idx: Vec<usize> = if n > 1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, n, 1000).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push((u.row(i) - u.row(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Gaussian-kernel SVM with `(C, bandwidth)` chosen by stratified k-fold
/// accuracy. Bandwidths are the median heuristic scaled by `multipliers`;
/// ties go to the earlier grid point.
pub fn train_kernel_svm(
    u: &DMatrix<f64>,
    labels: &[i8],
    c_grid: &[f64],
    multipliers: &[f64],
    folds: usize,
    seed: u64,
) -> Result<KernelSvmModel> {
    check_folds(labels, folds)?;
    if u.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", labels.len(), u.nrows())));
    }
    let base = median_heuristic(u, seed);
    let fold_of = stratified_folds(labels, folds, seed);
    let n = labels.len();
    let mut best: Option<(f64, f64, f64)> = None;
    for &m in multipliers {
        let kernel = KernelSpec::Gaussian { bandwidth: base * m };
        let gram = kernel.cross_gram(u, u);
        for &c in c_grid {
            let scores = cross_fitted_scores(&gram, labels, &fold_of, folds, c)?;
            let correct = accuracy(&scores, labels) * n as f64;
            let acc = correct / n as f64;
            if best.map_or(true, |(_, _, a)| acc > a) {
                best = Some((c, base * m, acc));
            }
        }
    }
    let (c, h, acc) = best.ok_or_else(|| Error::InvalidArgument("empty hyperparameter grid".into()))?;
    let mut model = fit_kernel_svm(u, labels, &KernelSpec::Gaussian { bandwidth: h }, c)?;
    model.cv_accuracy = Some(acc);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centers: Vec<Vec<f64>>,
    /// Mean squared distance to the assigned center.
    pub inertia: f64,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn assign(&self, u: &DMatrix<f64>) -> Vec<usize> {
        u.row_iter()
            .map(|r| {
                let x: Vec<f64> = r.iter().copied().collect();
                nearest(&x, &self.centers).0
            })
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &rows[next]));
        }
    }
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

fn lloyd(rows: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansModel {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut total = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let (c, d) = nearest(r, &centers);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            total += d;
        }
        history.push(total / n as f64);
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; p]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (r, &c) in rows.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            // an empty cluster keeps its previous center
            if counts[c] > 0 {
                *center = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = *history.last().unwrap_or(&0.0);
    KMeansModel { centers, inertia, assignments, iterations, inertia_history: history }
}

/// k-means++ seeding and Lloyd iterations (at most 300), best of `restarts`.
pub fn kmeans(u: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<KMeansModel> {
    let n = u.nrows();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("k = {k} needs 1 <= k <= n = {n}")));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite value in k-means input".into()));
    }
    let rows: Vec<Vec<f64>> = u.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansModel> = None;
    for _ in 0..restarts.max(1) {
        let centers = kmeans_pp(&rows, k, &mut rng);
        let model = lloyd(&rows, centers, 300);
        if best.as_ref().map_or(true, |b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean squared distance of rows to their assigned centers.
pub fn mean_squared_distance(u: &DMatrix<f64>, centers: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    if assignments.len() != u.nrows() || assignments.iter().any(|&a| a >= centers.len()) {
        return Err(Error::DimensionMismatch("assignments do not match rows or centers".into()));
    }
    let total: f64 = u
        .row_iter()
        .zip(assignments)
        .map(|(r, &a)| r.iter().zip(&centers[a]).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
        .sum();
    Ok(total / u.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComposition {
    pub cluster: usize,
    pub size: usize,
    pub n_pos: usize,
    /// Percentage of members with `z = +1`.
    pub pct_pos: f64,
}

pub fn cluster_composition(assignments: &[usize], z: &[i8], k: usize) -> Result<Vec<ClusterComposition>> {
    if assignments.len() != z.len() {
        return Err(Error::DimensionMismatch(format!("{} assignments for {} labels", assignments.len(), z.len())));
    }
    let mut size = vec![0usize; k];
    let mut pos = vec![0usize; k];
    for (&a, &l) in assignments.iter().zip(z) {
        if a >= k {
            return Err(Error::InvalidArgument(format!("assignment {a} outside {k} clusters")));
        }
        size[a] += 1;
        pos[a] += usize::from(l == 1);
    }
    (0..k)
        .map(|c| {
            if size[c] == 0 {
                return Err(Error::EmptyCluster(c));
            }
            Ok(ClusterComposition {
                cluster: c,
                size: size[c],
                n_pos: pos[c],
                pct_pos: 100.0 * pos[c] as f64 / size[c] as f64,
            })
        })
        .collect()
}

/// Population standard deviation of the per-cluster percentages of `z = +1`.
pub fn cluster_composition_stddev(assignments: &[usize], z: &[i8], k: usize) -> Result<f64> {
    let comp = cluster_composition(assignments, z, k)?;
    Ok(population_std(&comp.iter().map(|c| c.pct_pos).collect::<Vec<_>>()))
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Area under the ROC curve by pair counting, ties credited one half.
pub fn auc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    let (pos, neg) = check_labels(labels, scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the concordant count plus ties, in integers
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end < idx.len() && scores[idx[end]] == scores[idx[k]] {
            end += 1;
        }
        let group = &idx[k..end];
        let gp = group.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let gn = group.len() as u128 - gp;
        twice += gp * (2 * neg_below + gn);
        neg_below += gn;
        k = end;
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Spearman rank correlation (average ranks for ties).
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
        let mut r = vec![0.0; v.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut end = k;
            while end < idx.len() && v[idx[end]] == v[idx[k]] {
                end += 1;
            }
            let avg = (k + end - 1) as f64 / 2.0;
            for &i in &idx[k..end] {
                r[i] = avg;
            }
            k = end;
        }
        r
    }
    let (ra, rb) = (DVector::from_vec(ranks(a)), DVector::from_vec(ranks(b)));
    let (ma, mb) = (ra.mean(), rb.mean());
    let (da, db) = (ra.add_scalar(-ma), rb.add_scalar(-mb));
    let denom = da.norm() * db.norm();
    if denom == 0.0 {
        0.0
    } else {
        da.dot(&db) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &[-1, -1, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[4.0, 3.0, 2.0, 1.0], &[-1, -1, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &[-1, 1, -1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 1.0], &[-1, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[1.0, 2.0], &[1, 1]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn composition_stddev_cases() {
        assert_eq!(cluster_composition_stddev(&[0, 0, 1, 1], &[1, -1, 1, -1], 2).unwrap(), 0.0);
        assert_eq!(cluster_composition_stddev(&[0, 0, 1, 1], &[1, -1, -1, -1], 2).unwrap(), 25.0);
        assert!(matches!(cluster_composition_stddev(&[0, 0], &[1, -1], 2), Err(Error::EmptyCluster(1))));
    }

    #[test]
    fn kmeans_degenerate_cases() {
        let same = DMatrix::from_element(5, 2, 3.0);
        assert_eq!(kmeans(&same, 1, 3, 0).unwrap().inertia, 0.0);
        let u = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 5.0, 9.0]);
        assert_eq!(kmeans(&u, 4, 2, 0).unwrap().inertia, 0.0);
        assert!(matches!(kmeans(&u, 5, 1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn separable_clouds_are_fit_exactly() {
        let u = DMatrix::from_row_slice(6, 2, &[-2.0, -1.0, -3.0, -2.0, -2.5, -1.5, 2.0, 1.0, 3.0, 2.0, 2.5, 1.5]);
        let y = [-1, -1, -1, 1, 1, 1];
        let m = fit_linear_svm(&u, &y, 10.0, 0).unwrap();
        assert_eq!(accuracy(&m.decision(&u).unwrap(), &y), 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let u = DMatrix::from_element(4, 1, 1.0);
        assert!(matches!(fit_linear_svm(&u, &[1, 1, 1, 1], 1.0, 0), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn smo_respects_box() {
        let u = DMatrix::from_row_slice(6, 1, &[0.0, 0.2, 1.0, 0.1, 0.9, 1.1]);
        let y = [-1, -1, 1, 1, -1, 1];
        let m = fit_kernel_svm(&u, &y, &KernelSpec::Gaussian { bandwidth: 0.5 }, 1.0).unwrap();
        assert!(m.alpha.iter().all(|&a| (-1e-6..=1.0 + 1e-6).contains(&a)));
    }
}
