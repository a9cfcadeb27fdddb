//! Cones and symmetric vectorization.
//!
//! PSD blocks are stored in `svec` form: the upper triangle, row by row,
//! with off-diagonal entries scaled by `sqrt(2)` so that
//! `svec(A) . svec(B) = <A, B>`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{raw_sym_eig, SymMatrix};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "snake_case")]
pub enum Cone {
    /// `{0}^len`
    Zero(usize),
    /// `R_+^len`
    NonNeg(usize),
    /// Symmetric PSD matrices of the given order, `m(m+1)/2` slots.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::NonNeg(n) => n,
            Cone::Psd(m) => triangular(m),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    blocks: Vec<Cone>,
}

impl ConeSpec {
    pub fn new(blocks: Vec<Cone>) -> Self {
        Self { blocks }
    }

    pub fn push(&mut self, cone: Cone) {
        self.blocks.push(cone);
    }

    pub fn blocks(&self) -> &[Cone] {
        &self.blocks
    }

    /// Total slack dimension.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Cone::dim).sum()
    }

    /// `(offset, cone)` for each block.
    pub fn offsets(&self) -> impl Iterator<Item = (usize, Cone)> + '_ {
        self.blocks.iter().scan(0, |off, c| {
            let start = *off;
            *off += c.dim();
            Some((start, *c))
        })
    }
}

pub fn triangular(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Position of entry `(i, j)` (either order) in the svec of an order-`m` matrix.
pub fn svec_index(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // row i starts at sum_{r<i} (m - r)
    i * m - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Order `m` with `m(m+1)/2 == len`, if any.
pub fn order_from_svec_len(len: usize) -> Option<usize> {
    let m = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (m..=m + 1).find(|&k| triangular(k) == len)
}

pub fn svec(a: &SymMatrix) -> Vec<f64> {
    svec_dense(a.as_matrix())
}

pub(crate) fn svec_dense(a: &DMatrix<f64>) -> Vec<f64> {
    let m = a.nrows();
    let mut out = Vec::with_capacity(triangular(m));
    for i in 0..m {
        out.push(a[(i, i)]);
        for j in (i + 1)..m {
            out.push(a[(i, j)] * SQRT2);
        }
    }
    out
}

pub fn smat(v: &[f64]) -> Result<SymMatrix> {
    let m = order_from_svec_len(v.len())
        .filter(|&m| m > 0)
        .ok_or_else(|| Error::DimensionMismatch(format!("{} is not a triangular number", v.len())))?;
    Ok(SymMatrix::from_upper(smat_dense(v, m)).expect("square by construction"))
}

pub(crate) fn smat_dense(v: &[f64], m: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        a[(i, i)] = v[k];
        k += 1;
        for j in (i + 1)..m {
            let x = v[k] / SQRT2;
            a[(i, j)] = x;
            a[(j, i)] = x;
            k += 1;
        }
    }
    a
}

/// Euclidean projection onto the cone product.
pub fn project_cone(s: &[f64], cones: &ConeSpec) -> Result<Vec<f64>> {
    if s.len() != cones.dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for cone dimension {}",
            s.len(),
            cones.dim()
        )));
    }
    let mut out = s.to_vec();
    project_in_place(&mut out, cones)?;
    Ok(out)
}

pub(crate) fn project_in_place(s: &mut [f64], cones: &ConeSpec) -> Result<()> {
    for (off, cone) in cones.offsets() {
        let block = &mut s[off..off + cone.dim()];
        match cone {
            Cone::Zero(_) => block.iter_mut().for_each(|v| *v = 0.0),
            Cone::NonNeg(_) => block.iter_mut().for_each(|v| *v = v.max(0.0)),
            Cone::Psd(m) => project_psd(block, m)?,
        }
    }
    Ok(())
}

/// Projection of one svec block onto the PSD cone by clipping eigenvalues at 0.
fn project_psd(block: &mut [f64], m: usize) -> Result<()> {
    if m == 1 {
        block[0] = block[0].max(0.0);
        return Ok(());
    }
    let a = smat_dense(block, m);
    let eig = raw_sym_eig(a.clone())?;
    let n_neg = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if n_neg == 0 {
        return Ok(());
    }
    let n_pos = m - n_neg;
    // rebuild from whichever side of the spectrum is smaller
    let projected = if n_pos <= n_neg {
        let mut out = DMatrix::zeros(m, m);
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l > 0.0 {
                let v = eig.eigenvectors.column(k);
                out.ger(l, &v, &v, 1.0);
            }
        }
        out
    } else {
        let mut out = a;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l < 0.0 {
                let v = eig.eigenvectors.column(k);
                out.ger(-l, &v, &v, 1.0);
            }
        }
        out
    };
    let mut k = 0;
    for i in 0..m {
        block[k] = projected[(i, i)];
        k += 1;
        for j in (i + 1)..m {
            block[k] = 0.5 * (projected[(i, j)] + projected[(j, i)]) * SQRT2;
            k += 1;
        }
    }
    Ok(())
}

/// Euclidean distance from `s` to the cone product.
pub fn distance_to_cone(s: &[f64], cones: &ConeSpec) -> Result<f64> {
    let p = project_cone(s, cones)?;
    Ok(s.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Projection onto the dual cone product (zero cone dualizes to free space,
/// the other cones are self-dual).
pub(crate) fn project_dual_in_place(s: &mut [f64], cones: &ConeSpec) -> Result<()> {
    for (off, cone) in cones.offsets() {
        let block = &mut s[off..off + cone.dim()];
        match cone {
            Cone::Zero(_) => {}
            Cone::NonNeg(_) => block.iter_mut().for_each(|v| *v = v.max(0.0)),
            Cone::Psd(m) => project_psd(block, m)?,
        }
    }
    Ok(())
}
