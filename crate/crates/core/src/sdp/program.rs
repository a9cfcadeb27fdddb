use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cone::{svec_index, triangular, Cone, ConeSpec, SQRT2};
use crate::error::{Error, Result};

/// Sparse matrix in triplet form with a compressed-row mirror for products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    /// `(row, col, value)`, sorted by row then column, duplicates merged.
    pub triplets: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in entries {
            if r >= nrows || c >= ncols {
                return Err(Error::DimensionMismatch(format!("entry ({r}, {c}) outside a {nrows}x{ncols} matrix")));
            }
            *merged.entry((r, c)).or_insert(0.0) += v;
        }
        let triplets = merged.into_iter().filter(|&(_, v)| v != 0.0).map(|((r, c), v)| (r, c, v)).collect();
        Ok(Self { nrows, ncols, triplets })
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn to_csr(&self) -> Csr {
        let mut row_ptr = vec![0usize; self.nrows + 1];
        for &(r, _, _) in &self.triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = self.triplets.iter().map(|t| t.1).collect();
        let values = self.triplets.iter().map(|t| t.2).collect();
        Csr { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }

    /// Dense `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.triplets {
            y[r] += v * x[c];
        }
        y
    }

    /// Dense `y = A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(r, c, v) in &self.triplets {
            y[c] += v * x[r];
        }
        y
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn tr_mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xi;
            }
        }
    }
}

/// `minimize c.x  subject to  A x + s = b,  s in K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub nvar: usize,
    pub c: Vec<f64>,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub cones: ConeSpec,
}

impl ConicProgram {
    pub fn new(c: Vec<f64>, a: SparseMatrix, b: Vec<f64>, cones: ConeSpec) -> Result<Self> {
        let prog = Self { nvar: c.len(), c, a, b, cones };
        prog.validate()?;
        Ok(prog)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.cones.dim();
        if self.a.nrows != m || self.b.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "A has {} rows and b has {} entries but the cones need {m}",
                self.a.nrows,
                self.b.len()
            )));
        }
        if self.a.ncols != self.nvar || self.c.len() != self.nvar {
            return Err(Error::DimensionMismatch(format!(
                "A has {} columns and c has {} entries for {} variables",
                self.a.ncols,
                self.c.len(),
                self.nvar
            )));
        }
        if self.c.iter().chain(&self.b).chain(self.a.triplets.iter().map(|t| &t.2)).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("program data contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.c, x)
    }

    /// Writes the self-describing JSON dump (dimensions, triplets, cones).
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let dump = ProgramDump {
            format: "conic-program".into(),
            version: 1,
            nvar: self.nvar,
            nrows: self.nrows(),
            nnz: self.a.nnz(),
            program: self.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&dump)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let dump: ProgramDump = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        dump.program.validate()?;
        Ok(dump.program)
    }
}

#[derive(Serialize, Deserialize)]
struct ProgramDump {
    format: String,
    version: u32,
    nvar: usize,
    nrows: usize,
    nnz: usize,
    program: ConicProgram,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine scalar expression `constant + sum coef * x[var]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(value: f64) -> Self {
        Self { constant: value, terms: Vec::new() }
    }

    pub fn term(var: usize, coef: f64) -> Self {
        Self { constant: 0.0, terms: vec![(var, coef)] }
    }

    pub fn add_term(&mut self, var: usize, coef: f64) {
        self.terms.push((var, coef));
    }
}

/// Entry `(i, j)` of an order-`m` symmetric matrix variable stored in svec
/// form starting at variable `offset`.
pub fn sym_entry(offset: usize, m: usize, i: usize, j: usize) -> AffineExpr {
    let coef = if i == j { 1.0 } else { 1.0 / SQRT2 };
    AffineExpr::term(offset + svec_index(m, i, j), coef)
}

/// Incremental assembly of a [`ConicProgram`]. Rows are appended block by
/// block; each row states that an affine expression of `x` lies in the cone.
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    nvar: usize,
    c: Vec<f64>,
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: ConeSpec,
}

impl ProgramBuilder {
    pub fn new(nvar: usize) -> Self {
        Self { nvar, c: vec![0.0; nvar], triplets: Vec::new(), b: Vec::new(), cones: ConeSpec::default() }
    }

    pub fn nvar(&self) -> usize {
        self.nvar
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.c[var] = coef;
    }

    pub fn add_objective(&mut self, var: usize, coef: f64) {
        self.c[var] += coef;
    }

    /// Appends the slack row `s = expr` (so `A` row is `-terms`, `b` is `constant`).
    fn push_row(&mut self, expr: &AffineExpr, scale: f64) {
        let row = self.b.len();
        for &(var, coef) in &expr.terms {
            self.triplets.push((row, var, -coef * scale));
        }
        self.b.push(expr.constant * scale);
    }

    /// `expr == 0` for each expression.
    pub fn add_zero(&mut self, exprs: &[AffineExpr]) {
        for e in exprs {
            self.push_row(e, 1.0);
        }
        self.cones.push(Cone::Zero(exprs.len()));
    }

    /// `expr >= 0` for each expression.
    pub fn add_nonneg(&mut self, exprs: &[AffineExpr]) {
        for e in exprs {
            self.push_row(e, 1.0);
        }
        self.cones.push(Cone::NonNeg(exprs.len()));
    }

    /// The symmetric matrix whose upper-triangle entries are `entry(i, j)`
    /// (for `i <= j`) must be PSD.
    pub fn add_psd(&mut self, order: usize, mut entry: impl FnMut(usize, usize) -> AffineExpr) {
        let start = self.b.len();
        for i in 0..order {
            for j in i..order {
                let scale = if i == j { 1.0 } else { SQRT2 };
                let e = entry(i, j);
                self.push_row(&e, scale);
            }
        }
        debug_assert_eq!(self.b.len() - start, triangular(order));
        self.cones.push(Cone::Psd(order));
    }

    pub fn build(self) -> Result<ConicProgram> {
        let nrows = self.b.len();
        let a = SparseMatrix::from_triplets(nrows, self.nvar, self.triplets)?;
        ConicProgram::new(self.c, a, self.b, self.cones)
    }
}
