//! Fair PCA and fair kernel PCA.
//!
//! The relaxed PCA problem over `{P : trace P <= d, 0 <= P <= I}` is extended
//! with a mean constraint `<P, f f^T> <= delta^2` (`f` is the gap between the
//! protected-group means) and covariance constraints written as two Schur
//! blocks `[[t I, P M], [M^T P, I]] >= 0` with `M M^T = ±Q + phi I`, `Q` the
//! difference of group covariances. The objective is `<X^T X, P> - mu t`.
//! Components are the top `d` eigenvectors of the optimal `P`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, spectral_norm, sym_eig, SymMatrix};
use crate::sdp::{
    order_from_svec_len, smat, solve, svec, svec_index, sym_entry, triangular, AffineExpr, ConicProgram,
    ProgramBuilder, Solution, SolveStatus, SolverSettings,
};

/// Eigenvalue clipping threshold for the square roots of `±Q + phi I`.
pub const SQRT_CLIP_TOL: f64 = 1e-10;
/// Gap between eigenvalues `d` and `d+1` of `P*` below which rounding is ambiguous.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Mean,
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    /// `exp(-|a - b|^2 / (2 h^2))`
    Gaussian {
        bandwidth: f64,
    },
    /// `(a.b + coef)^degree`
    Polynomial {
        degree: u32,
        coef: f64,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::ConfigurationError(format!("Gaussian bandwidth {bandwidth} must be positive")))
            }
            KernelSpec::Polynomial { degree, coef } if degree == 0 || !coef.is_finite() || coef < 0.0 => {
                Err(Error::ConfigurationError(format!(
                    "polynomial kernel needs degree >= 1 and coef >= 0, got {degree}, {coef}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Gaussian { bandwidth } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, coef } => (dot(a, b) + coef).powi(degree as i32),
        }
    }

    /// `K[i, j] = k(a_i, b_j)` over the rows of `a` and `b`.
    pub fn cross_gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ra = rows_of(a);
        let rb = rows_of(b);
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval(&ra[i], &rb[j]))
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Serializes an infinite bound as the string `"inf"`.
mod bound_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid bound '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaConfig {
    /// Target dimension.
    pub d: usize,
    /// Bound on the projected mean gap; infinite means no mean constraint.
    #[serde(with = "bound_serde")]
    pub delta: f64,
    /// Weight of the covariance slack in the objective.
    pub mu: f64,
    pub constraints: BTreeSet<Constraint>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Additional ±1 protected attributes aligned with the training rows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_protected: Vec<Vec<i8>>,
    /// Also constrain the interaction of the primary attribute with each extra one.
    #[serde(default)]
    pub joint_fairness: bool,
    /// Divide features by their sample standard deviation after centering.
    pub standardize: bool,
    /// `phi = |Q|_2 (1 + phi_margin)`
    pub phi_margin: f64,
    /// Kernel mode subsamples the training set to at most this many rows.
    pub kernel_max_rows: usize,
    /// Seed for the kernel-mode subsample.
    pub seed: u64,
    pub solver: SolverSettings,
    /// A solve that hits the iteration limit is still accepted when all
    /// relative residuals are below this value.
    pub accept_residual: f64,
    /// With `delta = 0`, optimize over the orthogonal complement of the mean
    /// gaps instead of passing the equality to the solver.
    #[serde(default = "default_true")]
    pub reduce_zero_mean: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FpcaConfig {
    fn default() -> Self {
        Self {
            d: 2,
            delta: f64::INFINITY,
            mu: 0.0,
            constraints: BTreeSet::new(),
            kernel: None,
            extra_protected: Vec::new(),
            joint_fairness: false,
            standardize: true,
            phi_margin: 1e-6,
            kernel_max_rows: 2000,
            seed: 0,
            solver: SolverSettings::with_tolerance(1e-5),
            accept_residual: 1e-3,
            reduce_zero_mean: true,
        }
    }
}

impl FpcaConfig {
    /// Plain PCA through the relaxation.
    pub fn pca(d: usize) -> Self {
        Self { d, ..Self::default() }
    }

    /// Mean and covariance constraints.
    pub fn fair(d: usize, delta: f64, mu: f64) -> Self {
        Self { d, delta, mu, constraints: [Constraint::Mean, Constraint::Covariance].into(), ..Self::default() }
    }

    /// Mean constraint only.
    pub fn mean_only(d: usize, delta: f64) -> Self {
        Self { d, delta, constraints: [Constraint::Mean].into(), ..Self::default() }
    }

    pub fn uses(&self, c: Constraint) -> bool {
        self.constraints.contains(&c)
    }

    /// Checks the scalar settings; `max_d` is the feature count (or row count in kernel mode).
    pub fn validate(&self, max_d: usize) -> Result<()> {
        if self.d == 0 || self.d > max_d {
            return Err(Error::InvalidDimension { d: self.d, max: max_d });
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::ConfigurationError(format!("delta {} must be >= 0", self.delta)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::ConfigurationError(format!("mu {} must be finite and >= 0", self.mu)));
        }
        if !(self.phi_margin >= 0.0 && self.phi_margin.is_finite()) {
            return Err(Error::ConfigurationError("phi_margin must be finite and >= 0".into()));
        }
        if self.kernel_max_rows < 2 {
            return Err(Error::ConfigurationError("kernel_max_rows must be at least 2".into()));
        }
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        if self.joint_fairness && self.extra_protected.is_empty() {
            return Err(Error::ConfigurationError("joint fairness needs an extra protected attribute".into()));
        }
        self.solver.validate()
    }

    fn mean_bound(&self) -> Option<f64> {
        (self.uses(Constraint::Mean) && self.delta.is_finite()).then_some(self.delta)
    }

    /// Number of attributes beyond the primary one that get their own constraints.
    fn extra_attribute_count(&self) -> usize {
        self.extra_protected.len() * if self.joint_fairness { 2 } else { 1 }
    }
}

/// Group moments entering the fairness constraints.
#[derive(Debug, Clone)]
pub struct GroupStats {
    /// `mean_plus - mean_minus`
    pub f: DVector<f64>,
    pub mean_plus: DVector<f64>,
    pub mean_minus: DVector<f64>,
    pub sigma_plus: SymMatrix,
    pub sigma_minus: SymMatrix,
    /// `sigma_plus - sigma_minus`
    pub q: SymMatrix,
    pub phi: f64,
    /// `m_plus m_plus^T = q + phi I`
    pub m_plus: DMatrix<f64>,
    /// `m_minus m_minus^T = -q + phi I`
    pub m_minus: DMatrix<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl GroupStats {
    /// Completes the statistics from group means and second-moment matrices.
    pub fn from_moments(
        mean_plus: DVector<f64>,
        mean_minus: DVector<f64>,
        sigma_plus: SymMatrix,
        sigma_minus: SymMatrix,
        n_pos: usize,
        n_neg: usize,
        phi_margin: f64,
    ) -> Result<Self> {
        let q = sigma_plus.sub(&sigma_minus)?;
        let phi = spectral_norm(&q)? * (1.0 + phi_margin);
        let m_plus = psd_sqrt(&q.shifted(phi), SQRT_CLIP_TOL * (1.0 + phi))?;
        let m_minus = psd_sqrt(&q.negated().shifted(phi), SQRT_CLIP_TOL * (1.0 + phi))?;
        Ok(Self {
            f: &mean_plus - &mean_minus,
            mean_plus,
            mean_minus,
            sigma_plus,
            sigma_minus,
            q,
            phi,
            m_plus,
            m_minus,
            n_pos,
            n_neg,
        })
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }
}

fn class_indices(z: &[i8]) -> Result<(Vec<usize>, Vec<usize>)> {
    if z.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::InvalidArgument("protected labels must be +1 or -1".into()));
    }
    let pos: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 1).collect();
    let neg: Vec<usize> = (0..z.len()).filter(|&i| z[i] == -1).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateProtectedClass(format!("class sizes {}/{}", pos.len(), neg.len())));
    }
    Ok((pos, neg))
}

fn sample_covariance(rows: &DMatrix<f64>, mean: &DVector<f64>) -> SymMatrix {
    let n = rows.nrows();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    SymMatrix::gram(&centered).scaled(1.0 / denom)
}

/// Group means, sample covariances and the shifted square roots for centered `x`.
pub fn group_stats(x: &DMatrix<f64>, z: &[i8], phi_margin: f64) -> Result<GroupStats> {
    if z.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", z.len(), x.nrows())));
    }
    let scale = crate::linalg::max_abs(x).max(1.0);
    for (j, col) in x.column_iter().enumerate() {
        let m = col.mean();
        if m.abs() > 1e-8 * scale {
            return Err(Error::PreconditionViolated(format!("column {j} has mean {m:e}; center the data first")));
        }
    }
    let (pos, neg) = class_indices(z)?;
    let xp = x.select_rows(&pos);
    let xn = x.select_rows(&neg);
    let mp = xp.row_mean().transpose();
    let mn = xn.row_mean().transpose();
    let sp = sample_covariance(&xp, &mp);
    let sn = sample_covariance(&xn, &mn);
    GroupStats::from_moments(mp, mn, sp, sn, pos.len(), neg.len(), phi_margin)
}

/// Kernel analogues: `f_k = K(X,X+) e / #P - K(X,X-) e / #N` and
/// `Q_k = K(X,X+) K(X+,X) - K(X,X-) K(X-,X)`.
pub fn kernel_group_stats(k: &SymMatrix, z: &[i8], phi_margin: f64) -> Result<GroupStats> {
    let n = k.order();
    if z.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for a Gram matrix of order {n}", z.len())));
    }
    let (pos, neg) = class_indices(z)?;
    let kp = k.as_matrix().select_columns(&pos);
    let kn = k.as_matrix().select_columns(&neg);
    let mp = kp.column_mean();
    let mn = kn.column_mean();
    let sp = SymMatrix::from_symmetrized(&(&kp * kp.transpose()))?;
    let sn = SymMatrix::from_symmetrized(&(&kn * kn.transpose()))?;
    GroupStats::from_moments(mp, mn, sp, sn, pos.len(), neg.len(), phi_margin)
}

/// Assembles `max <C, P> - mu t` with the requested fairness rows as a
/// minimization program over `x = (svec(P), t)`.
fn assemble(
    c: &SymMatrix,
    d: usize,
    mean_bound: Option<f64>,
    stats: &[&GroupStats],
    covariance: bool,
    mu: f64,
) -> Result<ConicProgram> {
    let p = c.order();
    let tp = triangular(p);
    let t_var = covariance.then_some(tp);
    let nvar = tp + usize::from(covariance);
    let mut b = ProgramBuilder::new(nvar);
    for (k, v) in svec(c).into_iter().enumerate() {
        b.set_objective(k, -v);
    }
    if let Some(t) = t_var {
        b.set_objective(t, mu);
    }

    let mut trace = AffineExpr::constant(d as f64);
    for i in 0..p {
        trace.add_term(svec_index(p, i, i), -1.0);
    }
    b.add_nonneg(&[trace]);
    b.add_psd(p, |i, j| sym_entry(0, p, i, j));
    b.add_psd(p, |i, j| {
        let mut e = sym_entry(0, p, i, j);
        e.terms[0].1 = -e.terms[0].1;
        e.constant = if i == j { 1.0 } else { 0.0 };
        e
    });

    if let Some(delta) = mean_bound {
        let mut equalities = Vec::new();
        let mut inequalities = Vec::new();
        for s in stats {
            let ff = SymMatrix::from_symmetrized(&(&s.f * s.f.transpose()))?;
            let terms: Vec<(usize, f64)> =
                svec(&ff).into_iter().enumerate().filter(|&(_, v)| v != 0.0).map(|(k, v)| (k, -v)).collect();
            if delta == 0.0 {
                equalities.push(AffineExpr { constant: 0.0, terms });
            } else {
                inequalities.push(AffineExpr { constant: delta * delta, terms });
            }
        }
        if !equalities.is_empty() {
            b.add_zero(&equalities);
        }
        if !inequalities.is_empty() {
            b.add_nonneg(&inequalities);
        }
    }

    if let Some(t) = t_var {
        for s in stats {
            for m in [&s.m_plus, &s.m_minus] {
                let r = m.ncols();
                b.add_psd(p + r, |i, j| {
                    if j < p {
                        if i == j {
                            AffineExpr::term(t, 1.0)
                        } else {
                            AffineExpr::default()
                        }
                    } else if i < p {
                        // (P M)[i, j - p]
                        let col = j - p;
                        let mut e = AffineExpr::default();
                        for l in 0..p {
                            let w = m[(l, col)];
                            if w != 0.0 {
                                let (var, coef) = sym_entry(0, p, i, l).terms[0];
                                e.add_term(var, coef * w);
                            }
                        }
                        e
                    } else {
                        AffineExpr::constant(if i == j { 1.0 } else { 0.0 })
                    }
                });
            }
        }
    }
    b.build()
}

/// `max <X^T X, P>  s.t.  trace P <= d, 0 <= P <= I`, in minimization form.
pub fn build_pca_sdp(x: &DMatrix<f64>, d: usize) -> Result<ConicProgram> {
    let p = x.ncols();
    if d == 0 || d > p {
        return Err(Error::InvalidDimension { d, max: p });
    }
    assemble(&SymMatrix::gram(x), d, None, &[], false, 0.0)
}

/// The fair program for `x` with statistics for the primary attribute and,
/// for multi-attribute configs, one entry of `extra` per additional
/// attribute (extra attributes first, then interactions when joint fairness
/// is on).
pub fn build_fpca_sdp(
    x: &DMatrix<f64>,
    stats: &GroupStats,
    extra: &[GroupStats],
    config: &FpcaConfig,
) -> Result<ConicProgram> {
    let p = x.ncols();
    config.validate(p)?;
    check_stats(p, stats, extra, config)?;
    let all: Vec<&GroupStats> = std::iter::once(stats).chain(extra).collect();
    assemble(&SymMatrix::gram(x), config.d, config.mean_bound(), &all, config.uses(Constraint::Covariance), config.mu)
}

fn check_stats(dim: usize, stats: &GroupStats, extra: &[GroupStats], config: &FpcaConfig) -> Result<()> {
    let wanted = config.extra_attribute_count();
    if extra.len() != wanted {
        return Err(Error::ConfigurationError(format!(
            "{} extra attribute statistics supplied, the configuration needs {wanted}",
            extra.len()
        )));
    }
    for s in std::iter::once(stats).chain(extra) {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch(format!("statistics of dimension {} for {dim} features", s.dim())));
        }
    }
    Ok(())
}

/// All protected label vectors besides the primary one, in constraint order.
fn extra_labels(z: &[i8], config: &FpcaConfig) -> Result<Vec<Vec<i8>>> {
    let mut out = Vec::new();
    for extra in &config.extra_protected {
        if extra.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "extra protected attribute has {} entries for {} rows",
                extra.len(),
                z.len()
            )));
        }
        out.push(extra.clone());
    }
    if config.joint_fairness {
        for extra in &config.extra_protected {
            // indicator of both attributes positive, remapped to ±1
            out.push(z.iter().zip(extra).map(|(&a, &b)| if a == 1 && b == 1 { 1 } else { -1 }).collect());
        }
    }
    Ok(out)
}

/// Doubly centered Gram matrix `C K C` with `C = I - e e^T / n`.
pub fn center_gram(k: &SymMatrix) -> SymMatrix {
    let n = k.order();
    let m = k.as_matrix();
    let col_means = m.row_mean();
    let grand = col_means.mean();
    let centered = DMatrix::from_fn(n, n, |i, j| m[(i, j)] - col_means[i] - col_means[j] + grand);
    SymMatrix::from_symmetrized(&centered).expect("square by construction")
}

fn check_gram(k: &SymMatrix) -> Result<()> {
    let tol = 1e-8 * k.max_abs().max(1.0);
    let eig = sym_eig(k)?;
    if eig.min_eigenvalue() < -tol {
        return Err(Error::InvalidKernel(format!("Gram matrix has eigenvalue {:e}", eig.min_eigenvalue())));
    }
    Ok(())
}

/// Kernel variant: objective `<C K C, P>` over `n x n` matrices `P`, with
/// `f_k` and `Q_k` in place of the mean gap and covariance difference.
pub fn build_kernel_fpca_sdp(k_full: &SymMatrix, z: &[i8], config: &FpcaConfig) -> Result<ConicProgram> {
    let n = k_full.order();
    config.validate(n)?;
    check_gram(k_full)?;
    let (stats, extra) = kernel_stats_for(k_full, z, config)?;
    let all: Vec<&GroupStats> = std::iter::once(&stats).chain(&extra).collect();
    assemble(&center_gram(k_full), config.d, config.mean_bound(), &all, config.uses(Constraint::Covariance), config.mu)
}

fn kernel_stats_for(k: &SymMatrix, z: &[i8], config: &FpcaConfig) -> Result<(GroupStats, Vec<GroupStats>)> {
    let stats = kernel_group_stats(k, z, config.phi_margin)?;
    let extra = if config.constraints.is_empty() {
        Vec::new()
    } else {
        extra_labels(z, config)?.iter().map(|l| kernel_group_stats(k, l, config.phi_margin)).collect::<Result<_>>()?
    };
    Ok((stats, extra))
}

/// Rounded solution: top-`d` eigenvectors of `P*` and its full spectrum.
#[derive(Debug, Clone)]
pub struct Components {
    pub v: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues `d` and `d+1` of `P*` coincide within [`TIE_TOL`].
    pub tie: bool,
}

/// Recovers `P*` from the solution vector (layout `(svec(P), [t])`).
pub fn p_star(solution: &Solution) -> Result<SymMatrix> {
    let len = solution.x.len();
    let order = order_from_svec_len(len)
        .or_else(|| order_from_svec_len(len.saturating_sub(1)))
        .filter(|&m| m > 0)
        .ok_or_else(|| Error::DimensionMismatch(format!("solution of length {len} holds no svec block")))?;
    smat(&solution.x[..triangular(order)])
}

/// Top-d eigenvector rounding with the default acceptance threshold for unconverged solves.
pub fn extract_components(solution: &Solution, d: usize) -> Result<Components> {
    extract_components_with(solution, d, FpcaConfig::default().accept_residual)
}

pub fn extract_components_with(solution: &Solution, d: usize, accept_residual: f64) -> Result<Components> {
    accept_solution(solution, accept_residual)?;
    round_components(&p_star(solution)?, d)
}

/// Rejects infeasible, unbounded and unconverged solves.
pub fn accept_solution(solution: &Solution, accept_residual: f64) -> Result<()> {
    match solution.status {
        SolveStatus::Optimal => {}
        SolveStatus::MaxIters if solution.max_residual() <= accept_residual => {
            log::warn!(
                "accepting unconverged solution after {} iterations (max residual {:e})",
                solution.iterations,
                solution.max_residual()
            );
        }
        SolveStatus::MaxIters => {
            return Err(Error::SolverNonConvergence {
                iterations: solution.iterations,
                primal_residual: solution.primal_residual,
                dual_residual: solution.dual_residual,
                duality_gap: solution.duality_gap,
            })
        }
        status => return Err(Error::SolverStatus(status.to_string())),
    }
    Ok(())
}

/// Top-`d` eigenvectors of `p`, sign-normalized, with the full spectrum.
pub fn round_components(p: &SymMatrix, d: usize) -> Result<Components> {
    if d == 0 || d > p.order() {
        return Err(Error::InvalidDimension { d, max: p.order() });
    }
    let eig = sym_eig(p)?;
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let tie = d < eigenvalues.len() && (eigenvalues[d - 1] - eigenvalues[d]).abs() <= TIE_TOL;
    if tie {
        log::warn!(
            "eigenvalues {} and {} of P* tie at {:.3e}; rounding falls back to the eigensolver order",
            d,
            d + 1,
            eigenvalues[d - 1]
        );
    }
    Ok(Components { v: eig.leading_vectors(d), eigenvalues, tie })
}

/// Post-solve measurements of the optimum and of its rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    /// `<C, P*> - mu t*`
    pub objective: f64,
    /// `<C, V V^T>`
    pub rounded_objective: f64,
    /// `<P*, f f^T>` per protected attribute.
    pub mean_constraint_values: Vec<f64>,
    /// `|P* f| / |f|` per protected attribute (0 when `f = 0`).
    pub p_star_mean_ratio: Vec<f64>,
    pub covariance_slack: Option<f64>,
    /// `|V^T f|^2` per protected attribute.
    pub rounded_mean_gap_sq: Vec<f64>,
    /// `|V^T Q V|_2` per protected attribute.
    pub rounded_covariance_norm: Vec<f64>,
    pub explained_variance: f64,
    /// Eigenvalue `d` minus eigenvalue `d+1` of `P*`.
    pub rounding_gap: f64,
    pub tie_warning: bool,
    pub n_train: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// State needed to embed new points in kernel mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelState {
    /// Normalized training rows used for the Gram matrix.
    pub train_rows: Vec<Vec<f64>>,
    pub train_indices: Vec<usize>,
    pub gram_col_means: Vec<f64>,
    pub gram_mean: f64,
}

pub const MODEL_FORMAT: &str = "fpca-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub format: String,
    pub version: u32,
    pub config: FpcaConfig,
    pub normalization: Normalization,
    /// Component matrix, row-major (`p x d`, or `n x d` in kernel mode).
    pub components: Vec<Vec<f64>>,
    pub p_star_eigenvalues: Vec<f64>,
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub kernel_state: Option<KernelState>,
}

impl FpcaModel {
    pub fn v(&self) -> DMatrix<f64> {
        let rows = self.components.len();
        let cols = self.components.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows, cols, |i, j| self.components[i][j])
    }

    pub fn input_dim(&self) -> usize {
        self.normalization.input_dim
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: FpcaModel = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::SchemaError(format!("unsupported model format {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

fn solve_program(prog: &ConicProgram, config: &FpcaConfig) -> Result<Solution> {
    let sol = solve(prog, &config.solver)?;
    log::debug!(
        "solver: {} after {} iterations (residuals {:e}, {:e}, {:e})",
        sol.status,
        sol.iterations,
        sol.primal_residual,
        sol.dual_residual,
        sol.duality_gap
    );
    accept_solution(&sol, config.accept_residual)?;
    Ok(sol)
}

/// Solver output with `P*` expressed in the full space.
struct SolvedProgram {
    solution: Solution,
    p: SymMatrix,
    t: Option<f64>,
}

/// Orthonormal basis of the orthogonal complement of `span(vectors)`.
fn complement_basis(dim: usize, vectors: &[&DVector<f64>]) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(dim, dim);
    for v in vectors {
        g += *v * v.transpose();
    }
    let eig = sym_eig(&SymMatrix::from_symmetrized(&g)?)?;
    let tol = 1e-10 * eig.max_eigenvalue().max(0.0);
    let keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] <= tol).collect();
    Ok(eig.eigenvectors.select_columns(&keep))
}

/// Solves the fair program for objective matrix `c` and the statistics of
/// every protected attribute.
///
/// `P >= 0` and `<P, f f^T> = 0` force `P f = 0`, so with `delta = 0` the
/// feasible set lives in the face `{B R B^T}` where `B` spans the complement
/// of the mean gaps. Optimizing over `R` with `B^T C B` and the compressed
/// covariance factors is the same problem, and it has strictly feasible
/// points, which the equality form lacks.
fn solve_fair(c: &SymMatrix, stats: &[GroupStats], config: &FpcaConfig) -> Result<SolvedProgram> {
    let covariance = config.uses(Constraint::Covariance);
    let refs: Vec<&GroupStats> = stats.iter().collect();
    let reduce = config.reduce_zero_mean && config.mean_bound() == Some(0.0);
    if !reduce {
        let used: &[&GroupStats] = if config.constraints.is_empty() { &[] } else { &refs };
        let prog = assemble(c, config.d, config.mean_bound(), used, covariance, config.mu)?;
        let solution = solve_program(&prog, config)?;
        let p = p_star(&solution)?;
        let t = covariance.then(|| solution.x[triangular(p.order())]);
        return Ok(SolvedProgram { solution, p, t });
    }

    let gaps: Vec<&DVector<f64>> = stats.iter().map(|s| &s.f).collect();
    let b = complement_basis(c.order(), &gaps)?;
    if b.ncols() == 0 {
        return Err(Error::ConfigurationError("a zero mean bound leaves no feasible direction".into()));
    }
    let reduced = stats
        .iter()
        .map(|s| {
            GroupStats::from_moments(
                b.transpose() * &s.mean_plus,
                b.transpose() * &s.mean_minus,
                s.sigma_plus.congruence(&b)?,
                s.sigma_minus.congruence(&b)?,
                s.n_pos,
                s.n_neg,
                config.phi_margin,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let reduced_refs: Vec<&GroupStats> = reduced.iter().collect();
    let prog = assemble(&c.congruence(&b)?, config.d, None, &reduced_refs, covariance, config.mu)?;
    let solution = solve_program(&prog, config)?;
    let r = p_star(&solution)?;
    let t = covariance.then(|| solution.x[triangular(r.order())]);
    let p = SymMatrix::from_symmetrized(&(&b * r.as_matrix() * b.transpose()))?;
    Ok(SolvedProgram { solution, p, t })
}

fn diagnostics(
    solved: &SolvedProgram,
    comps: &Components,
    c: &SymMatrix,
    stats: &[GroupStats],
    config: &FpcaConfig,
    explained: f64,
    n_train: usize,
) -> Result<Diagnostics> {
    let sol = &solved.solution;
    let p = &solved.p;
    let v = &comps.v;
    let mut mean_vals = Vec::new();
    let mut ratios = Vec::new();
    let mut gaps = Vec::new();
    let mut cov_norms = Vec::new();
    for s in stats {
        let pf = p.as_matrix() * &s.f;
        mean_vals.push(s.f.dot(&pf));
        let fnorm = s.f.norm();
        ratios.push(if fnorm > 0.0 { pf.norm() / fnorm } else { 0.0 });
        gaps.push((v.transpose() * &s.f).norm_squared());
        cov_norms.push(spectral_norm(&s.q.congruence(v)?)?);
    }
    let d = config.d;
    let ev = &comps.eigenvalues;
    let rounding_gap = if d < ev.len() { ev[d - 1] - ev[d] } else { ev[d - 1] };
    Ok(Diagnostics {
        status: sol.status,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        duality_gap: sol.duality_gap,
        objective: c.inner_product(p) - config.mu * solved.t.unwrap_or(0.0),
        rounded_objective: c.congruence(v)?.trace(),
        mean_constraint_values: mean_vals,
        p_star_mean_ratio: ratios,
        covariance_slack: solved.t,
        rounded_mean_gap_sq: gaps,
        rounded_covariance_norm: cov_norms,
        explained_variance: explained.clamp(0.0, 1.0),
        rounding_gap,
        tie_warning: comps.tie,
        n_train,
        n_pos: stats[0].n_pos,
        n_neg: stats[0].n_neg,
    })
}

/// Full pipeline: normalize, compute group statistics, build and solve the
/// program, round, and record diagnostics.
pub fn fit(dataset: &Dataset, config: &FpcaConfig) -> Result<FpcaModel> {
    dataset.validate()?;
    let normalization = Normalization::fit(&dataset.x, config.standardize)?;
    let x = normalization.apply(&dataset.x)?;
    match &config.kernel {
        None => fit_linear(x, &dataset.z, normalization, config),
        Some(kernel) => fit_kernel(x, &dataset.z, normalization, kernel.clone(), config),
    }
}

fn all_stats(z: &[i8], config: &FpcaConfig, compute: impl Fn(&[i8]) -> Result<GroupStats>) -> Result<Vec<GroupStats>> {
    let mut stats = vec![compute(z)?];
    if !config.constraints.is_empty() {
        for labels in extra_labels(z, config)? {
            stats.push(compute(&labels)?);
        }
    }
    Ok(stats)
}

fn fit_linear(x: DMatrix<f64>, z: &[i8], normalization: Normalization, config: &FpcaConfig) -> Result<FpcaModel> {
    let (n, p) = x.shape();
    config.validate(p)?;
    let stats = all_stats(z, config, |labels| group_stats(&x, labels, config.phi_margin))?;
    let c = SymMatrix::gram(&x);
    let solved = solve_fair(&c, &stats, config)?;
    let comps = round_components(&solved.p, config.d)?;

    let cov = c.scaled(1.0 / (n - 1) as f64);
    let explained = cov.congruence(&comps.v)?.trace() / cov.trace();
    let diag = diagnostics(&solved, &comps, &c, &stats, config, explained, n)?;
    Ok(FpcaModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: config.clone(),
        normalization,
        components: rows_of(&comps.v),
        p_star_eigenvalues: comps.eigenvalues,
        diagnostics: diag,
        kernel_state: None,
    })
}

fn fit_kernel(
    x: DMatrix<f64>,
    z: &[i8],
    normalization: Normalization,
    kernel: KernelSpec,
    config: &FpcaConfig,
) -> Result<FpcaModel> {
    kernel.validate()?;
    let n_all = x.nrows();
    let indices: Vec<usize> = if n_all > config.kernel_max_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut idx = rand::seq::index::sample(&mut rng, n_all, config.kernel_max_rows).into_vec();
        idx.sort_unstable();
        log::info!("kernel mode: subsampled {} of {n_all} rows", idx.len());
        idx
    } else {
        (0..n_all).collect()
    };
    let xs = x.select_rows(&indices);
    let zs: Vec<i8> = indices.iter().map(|&i| z[i]).collect();
    let mut cfg = config.clone();
    cfg.extra_protected = config
        .extra_protected
        .iter()
        .map(|e| {
            if e.len() != n_all {
                Err(Error::DimensionMismatch(format!(
                    "extra protected attribute has {} entries for {n_all} rows",
                    e.len()
                )))
            } else {
                Ok(indices.iter().map(|&i| e[i]).collect())
            }
        })
        .collect::<Result<_>>()?;
    let n = xs.nrows();
    cfg.validate(n)?;

    let k = SymMatrix::from_symmetrized(&kernel.cross_gram(&xs, &xs))?;
    check_gram(&k)?;
    let stats = all_stats(&zs, &cfg, |labels| kernel_group_stats(&k, labels, cfg.phi_margin))?;
    let kc = center_gram(&k);
    let solved = solve_fair(&kc, &stats, &cfg)?;
    let comps = round_components(&solved.p, cfg.d)?;
    let total = kc.trace();
    let explained = if total > 0.0 { kc.congruence(&comps.v)?.trace() / total } else { 0.0 };
    let diag = diagnostics(&solved, &comps, &kc, &stats, &cfg, explained, n)?;

    let col_means: Vec<f64> = k.as_matrix().row_mean().iter().copied().collect();
    let gram_mean = col_means.iter().sum::<f64>() / n as f64;
    // the stored config keeps the caller's full-length attribute vectors
    Ok(FpcaModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: config.clone(),
        normalization,
        components: rows_of(&comps.v),
        p_star_eigenvalues: comps.eigenvalues,
        diagnostics: diag,
        kernel_state: Some(KernelState {
            train_rows: rows_of(&xs),
            train_indices: indices,
            gram_col_means: col_means,
            gram_mean,
        }),
    })
}

/// Scores of new raw rows: normalization, then `V^T x` (or `V^T k~(x)` with
/// the kernel vector centered against the training Gram matrix).
pub fn transform(model: &FpcaModel, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xn = model.normalization.apply(x_new)?;
    let v = model.v();
    match (&model.config.kernel, &model.kernel_state) {
        (None, _) => {
            if v.nrows() != xn.ncols() {
                return Err(Error::DimensionMismatch(format!("model expects {} features", v.nrows())));
            }
            Ok(xn * v)
        }
        (Some(kernel), Some(state)) => {
            let train = DMatrix::from_fn(state.train_rows.len(), xn.ncols(), |i, j| state.train_rows[i][j]);
            let mut kx = kernel.cross_gram(&xn, &train);
            for mut row in kx.row_iter_mut() {
                let row_mean = row.mean();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v - row_mean - state.gram_col_means[j] + state.gram_mean;
                }
            }
            Ok(kx * v)
        }
        (Some(_), None) => Err(Error::SchemaError("kernel model lacks its training state".into())),
    }
}

/// Gaussian fairness bound from projected moments:
/// `sqrt((s-/s+ + (m+ - m-)^2 / s+ + ln(s+/s-) - 1) / 4)`.
pub fn kl_bound_from_moments(s_plus: f64, s_minus: f64, m_plus: f64, m_minus: f64) -> Result<f64> {
    if !(s_plus > 0.0 && s_minus > 0.0) {
        return Err(Error::DegenerateVariance(format!("projected variances {s_plus:e}, {s_minus:e}")));
    }
    let inner = s_minus / s_plus + (m_plus - m_minus).powi(2) / s_plus + (s_plus / s_minus).ln() - 1.0;
    Ok((0.25 * inner.max(0.0)).sqrt())
}

/// Bound for the linear classifier `w` on the reduction `V`, using group
/// means and covariances in the original feature space.
pub fn kl_fairness_bound(
    w: &DVector<f64>,
    v: &DMatrix<f64>,
    mean_plus: &DVector<f64>,
    mean_minus: &DVector<f64>,
    sigma_plus: &SymMatrix,
    sigma_minus: &SymMatrix,
) -> Result<f64> {
    if w.len() != v.ncols() || v.nrows() != mean_plus.len() || mean_plus.len() != mean_minus.len() {
        return Err(Error::DimensionMismatch("w, V and the group moments disagree in size".into()));
    }
    let u = v * w;
    let s_plus = u.dot(&(sigma_plus.as_matrix() * &u));
    let s_minus = u.dot(&(sigma_minus.as_matrix() * &u));
    kl_bound_from_moments(s_plus, s_minus, u.dot(mean_plus), u.dot(mean_minus))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        let mut x = DMatrix::from_row_slice(rows, cols, data);
        let means = x.row_mean();
        for mut r in x.row_iter_mut() {
            r -= &means;
        }
        x
    }

    #[test]
    fn mean_gap_hand_example() {
        let x = centered(4, 2, &[1.0, 0.0, 3.0, 0.0, 0.0, 2.0, 0.0, 4.0]);
        let s = group_stats(&x, &[1, 1, -1, -1], 1e-6).unwrap();
        assert!((s.f[0] - 2.0).abs() < 1e-12 && (s.f[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_give_zero_statistics() {
        let x = centered(4, 2, &[1.0, 2.0, -1.0, 0.5, 1.0, 2.0, -1.0, 0.5]);
        let s = group_stats(&x, &[1, 1, -1, -1], 1e-6).unwrap();
        assert!(s.f.norm() < 1e-12);
        assert!(s.q.max_abs() < 1e-12);
        assert_eq!(s.phi, 0.0);
    }

    #[test]
    fn group_stats_preconditions() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(group_stats(&x, &[1, -1], 0.0), Err(Error::PreconditionViolated(_))));
        let x = centered(2, 1, &[1.0, 2.0]);
        assert!(matches!(group_stats(&x, &[1, 1], 0.0), Err(Error::DegenerateProtectedClass(_))));
    }

    #[test]
    fn kernel_statistics_vanish_for_identical_groups() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 0.5, 0.0, 1.0, 2.0, 0.5]);
        let k = KernelSpec::Gaussian { bandwidth: 1.0 }.cross_gram(&x, &x);
        let s = kernel_group_stats(&SymMatrix::from_symmetrized(&k).unwrap(), &[1, 1, -1, -1], 1e-6).unwrap();
        assert!(s.f.norm() < 1e-12);
        assert!(s.q.max_abs() < 1e-12);
    }

    #[test]
    fn kl_bound_cases() {
        assert_eq!(kl_bound_from_moments(2.0, 2.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((kl_bound_from_moments(1.0, 1.0, 2.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        let want = 0.5 * (-0.5f64).exp();
        assert!((kl_bound_from_moments(e, 1.0, 0.0, 0.0).unwrap() - want).abs() < 1e-15);
        assert!(matches!(kl_bound_from_moments(0.0, 1.0, 0.0, 0.0), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn extraction_of_diagonal_optimum() {
        let mut x = svec(&SymMatrix::from_diagonal(&[0.9, 0.6, 0.5]));
        x.push(0.0);
        let sol = Solution {
            x,
            y: vec![],
            s: vec![],
            status: SolveStatus::Optimal,
            primal_residual: 0.0,
            dual_residual: 0.0,
            duality_gap: 0.0,
            iterations: 1,
            primal_objective: 0.0,
            dual_objective: 0.0,
            final_rho: 1.0,
        };
        let comps = extract_components(&sol, 2).unwrap();
        assert_eq!(comps.eigenvalues, vec![0.9, 0.6, 0.5]);
        assert!((comps.v[(0, 0)] - 1.0).abs() < 1e-12 && (comps.v[(1, 1)] - 1.0).abs() < 1e-12);
        // rounding never lowers the objective for a matching diagonal C
        let c = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        let p = p_star(&sol).unwrap();
        assert!(c.congruence(&comps.v).unwrap().trace() >= c.inner_product(&p));
    }

    #[test]
    fn failed_solves_are_reported() {
        let sol = Solution {
            x: svec(&SymMatrix::identity(2)),
            y: vec![],
            s: vec![],
            status: SolveStatus::MaxIters,
            primal_residual: 1.0,
            dual_residual: 0.0,
            duality_gap: 0.0,
            iterations: 7,
            primal_objective: 0.0,
            dual_objective: 0.0,
            final_rho: 1.0,
        };
        assert!(matches!(extract_components(&sol, 1), Err(Error::SolverNonConvergence { iterations: 7, .. })));
        let infeasible = Solution { status: SolveStatus::Infeasible, ..sol };
        assert!(matches!(extract_components(&infeasible, 1), Err(Error::SolverStatus(_))));
    }

    #[test]
    fn config_round_trips_infinite_delta() {
        let cfg = FpcaConfig::pca(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"inf\""));
        let back: FpcaConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(FpcaConfig::pca(0).validate(3), Err(Error::InvalidDimension { d: 0, max: 3 })));
        assert!(matches!(FpcaConfig::pca(4).validate(3), Err(Error::InvalidDimension { .. })));
        let bad = FpcaConfig { mu: -1.0, ..FpcaConfig::pca(1) };
        assert!(matches!(bad.validate(3), Err(Error::ConfigurationError(_))));
        let bad = FpcaConfig { kernel: Some(KernelSpec::Gaussian { bandwidth: 0.0 }), ..FpcaConfig::pca(1) };
        assert!(matches!(bad.validate(3), Err(Error::ConfigurationError(_))));
    }
}
