//! Dense symmetric linear algebra: eigendecomposition, spectral norms and
//! PSD square roots.
//!
//! Every eigendecomposition returned from this module follows one
//! convention: eigenvalues in non-increasing order, each eigenvector signed
//! so that its largest-magnitude entry is positive (first such entry on
//! magnitude ties). Downstream projections are therefore reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Convergence threshold passed to the tridiagonal QR iteration.
const EIG_EPS: f64 = f64::EPSILON;
/// Sweep budget before reporting `NumericalFailure`.
const EIG_MAX_ITERS: usize = 100_000;

/// Real symmetric matrix. Construction copies the upper triangle onto the
/// lower one, so the upper triangle is authoritative.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from a square matrix, mirroring its upper triangle.
    pub fn from_upper(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut inner = m;
        for j in 0..n {
            for i in (j + 1)..n {
                inner[(i, j)] = inner[(j, i)];
            }
        }
        Ok(Self { inner })
    }

    /// Builds from a matrix that is symmetric up to rounding, averaging the
    /// two triangles.
    pub fn from_symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() != m.nrows() {
            return Err(Error::InvalidMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let inner = (m + m.transpose()) * 0.5;
        Ok(Self { inner })
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!("{} entries for an order-{n} matrix", data.len())));
        }
        Self::from_upper(DMatrix::from_row_slice(n, n, data))
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { inner: DMatrix::zeros(n, n) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self { inner: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    /// `A^T A`, symmetric by construction.
    pub fn gram(a: &DMatrix<f64>) -> Self {
        let g = a.transpose() * a;
        Self { inner: (&g + g.transpose()) * 0.5 }
    }

    pub fn order(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    /// `A + phi * I`.
    pub fn shifted(&self, phi: f64) -> Self {
        let mut inner = self.inner.clone();
        for i in 0..inner.nrows() {
            inner[(i, i)] += phi;
        }
        Self { inner }
    }

    pub fn negated(&self) -> Self {
        Self { inner: -&self.inner }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { inner: &self.inner * s }
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        if self.order() != other.order() {
            return Err(Error::DimensionMismatch(format!("order {} vs {}", self.order(), other.order())));
        }
        Ok(Self { inner: &self.inner - &other.inner })
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Frobenius inner product `<A, B>`.
    pub fn inner_product(&self, other: &SymMatrix) -> f64 {
        self.inner.dot(&other.inner)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.inner)
    }

    /// `V^T A V` for a rectangular `V`.
    pub fn congruence(&self, v: &DMatrix<f64>) -> Result<Self> {
        if v.nrows() != self.order() {
            return Err(Error::DimensionMismatch(format!(
                "congruence by {}x{} on order {}",
                v.nrows(),
                v.ncols(),
                self.order()
            )));
        }
        Self::from_symmetrized(&(v.transpose() * &self.inner * v))
    }

    fn check_finite(&self) -> Result<()> {
        if self.inner.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidMatrix("non-finite entry".into()))
        }
    }
}

/// Full spectral decomposition, eigenvalues non-increasing.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl EigDecomposition {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `sum_i lambda_i v_i v_i^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*lambda);
        }
        scaled * v.transpose()
    }

    /// First `d` eigenvectors as a `n x d` matrix.
    pub fn leading_vectors(&self, d: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, d).into_owned()
    }
}

/// Raw decomposition without ordering or sign normalization; used by cone
/// projections where only the spectrum split matters.
pub(crate) fn raw_sym_eig(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, EIG_EPS, EIG_MAX_ITERS)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))
}

pub fn sym_eig(a: &SymMatrix) -> Result<EigDecomposition> {
    a.check_finite()?;
    let n = a.order();
    let raw = raw_sym_eig(a.inner.clone())?;

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep the solver's order
    order.sort_by(|&i, &j| raw.eigenvalues[j].total_cmp(&raw.eigenvalues[i]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| raw.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = raw.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        normalize_sign(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigDecomposition { eigenvalues, eigenvectors })
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// `max(|lambda_max|, |lambda_min|)`.
pub fn spectral_norm(a: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(a)?;
    Ok(eig.max_eigenvalue().abs().max(eig.min_eigenvalue().abs()))
}

/// `max(||A + phi I||_2, ||-A + phi I||_2) - phi`, which equals `||A||_2`
/// whenever `phi >= ||A||_2`.
pub fn spectral_shift_norm(a: &SymMatrix, phi: f64) -> Result<f64> {
    let norm = spectral_norm(a)?;
    if phi < norm - 1e-12 {
        return Err(Error::PreconditionViolated(format!("shift {phi} is below the spectral norm {norm}")));
    }
    let plus = spectral_norm(&a.shifted(phi))?;
    let minus = spectral_norm(&a.negated().shifted(phi))?;
    Ok(plus.max(minus) - phi)
}

/// Rectangular `M` with `M M^T = A`, from the eigendecomposition with
/// eigenvalues clipped at zero. Columns for clipped eigenvalues are dropped,
/// so `M` has one column per eigenvalue above `clip_tol`.
pub fn psd_sqrt(a: &SymMatrix, clip_tol: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(a)?;
    let min = eig.min_eigenvalue();
    if min < -clip_tol {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let keep: Vec<usize> = (0..a.order()).filter(|&i| eig.eigenvalues[i] > clip_tol).collect();
    let mut m = DMatrix::zeros(a.order(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        let col = eig.eigenvectors.column(src) * eig.eigenvalues[src].sqrt();
        m.set_column(dst, &col);
    }
    Ok(m)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `||V^T V - I||_max`.
pub fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let gram = v.transpose() * v;
    max_abs(&(gram - DMatrix::identity(v.ncols(), v.ncols())))
}

/// Orthonormal basis for the column space of `a` (thin QR).
pub fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Principal angles (radians, ascending) between the column spaces of two
/// full-column-rank matrices with the same number of rows.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!("{} rows vs {} rows", a.nrows(), b.nrows())));
    }
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let cross = qa.transpose() * qb;
    let svd = cross.svd(false, false);
    let mut angles: Vec<f64> = svd.singular_values.iter().map(|s| s.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Largest principal angle between the two column spaces.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(a, b)?.into_iter().fold(0.0, f64::max))
}
