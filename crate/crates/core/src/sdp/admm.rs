//! Operator-splitting solver for conic programs in the form
//! `minimize c.x  s.t.  A x + s = b,  s in K`.
//!
//! Each iteration solves one linear system with the fixed matrix
//! `sigma I + A^T R A` (factored once, refactored only when `rho` changes),
//! then projects onto the cone product. The problem is equilibrated first
//! (modified Ruiz scaling, uniform within PSD blocks) and every residual is
//! reported on the original, unscaled data.
//!
//! Dual sign convention: at optimality `A^T y + c = 0`, `y` lies in the dual
//! cone and `c.x + b.y = 0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::cone::{distance_to_cone, project_dual_in_place, project_in_place, Cone, ConeSpec};
use super::program::{dot, ConicProgram, Csr, SparseMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Initial step-size parameter.
    pub rho: f64,
    /// Over-relaxation, strictly between 1 and 2.
    pub alpha: f64,
    /// Proximal regularization on `x`.
    pub sigma: f64,
    /// Residuals are evaluated every `check_interval` iterations.
    pub check_interval: usize,
    pub adaptive_rho: bool,
    /// Minimum number of iterations between two `rho` updates.
    pub adaptive_rho_interval: usize,
    /// `rho` is multiplied by `sqrt(primal / dual)` of the normalized
    /// residuals when that factor lies outside `[1/tol, tol]`.
    pub adaptive_rho_tolerance: f64,
    /// Multiplier on `rho` for equality (zero-cone) rows.
    pub equality_rho_scale: f64,
    pub scaling_iters: usize,
    /// Iterations without residual progress before certificates are examined.
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    pub infeasibility_tol: f64,
    /// Always on: no randomness and a fixed evaluation order.
    pub deterministic: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iters: 100_000,
            rho: 1.0,
            alpha: 1.5,
            sigma: 1e-6,
            check_interval: 10,
            adaptive_rho: true,
            adaptive_rho_interval: 50,
            adaptive_rho_tolerance: 5.0,
            equality_rho_scale: 1e3,
            scaling_iters: 10,
            stagnation_window: 1000,
            stagnation_tol: 1e-12,
            infeasibility_tol: 1e-6,
            deterministic: true,
        }
    }
}

impl SolverSettings {
    pub fn with_tolerance(eps: f64) -> Self {
        Self { eps_abs: eps, eps_rel: eps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::ConfigurationError("solver tolerances must be positive".into()));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(Error::ConfigurationError(format!("over-relaxation {} must lie in (1, 2)", self.alpha)));
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) || self.check_interval == 0 || self.max_iters == 0 {
            return Err(Error::ConfigurationError(
                "rho and sigma must be positive, check interval and iteration budget nonzero".into(),
            ));
        }
        if self.adaptive_rho_tolerance <= 1.0 {
            return Err(Error::ConfigurationError("rho adaptation tolerance must exceed 1".into()));
        }
        if !self.deterministic {
            return Err(Error::ConfigurationError("the solver only runs deterministically".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIters,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIters => "max_iters",
        };
        f.write_str(s)
    }
}

/// Solver output. Residuals are relative:
/// `||Ax+s-b|| / (1+||b||)`, `||A^T y + c|| / (1+||c||)` and
/// `|c.x + b.y| / (1 + |c.x| + |b.y|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub final_rho: f64,
}

impl Solution {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.duality_gap)
    }
}

/// Iterate summary handed to observers at every residual check.
#[derive(Debug, Clone)]
pub struct Snapshot<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub s: &'a [f64],
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

pub fn solve(prog: &ConicProgram, settings: &SolverSettings) -> Result<Solution> {
    solve_with_observer(prog, settings, |_| {})
}

/// [`solve`] with a callback invoked at each residual check.
pub fn solve_with_observer(
    prog: &ConicProgram,
    settings: &SolverSettings,
    mut observer: impl FnMut(&Snapshot<'_>),
) -> Result<Solution> {
    settings.validate()?;
    prog.validate()?;
    let mut work = Workspace::new(prog, settings)?;
    work.run(settings, &mut observer)
}

struct Scaling {
    /// column scaling, `x = D xs`
    d: Vec<f64>,
    /// row scaling, `ss = E s`
    e: Vec<f64>,
    /// objective scaling
    cost: f64,
}

fn equilibrate(prog: &ConicProgram, iters: usize) -> Scaling {
    let (m, n) = (prog.nrows(), prog.nvar);
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let clamp = |v: f64| v.clamp(1e-4, 1e4);
    // row blocks that must share a single scale factor
    let mut groups: Vec<(usize, usize, bool)> = Vec::new();
    for (off, cone) in prog.cones.offsets() {
        groups.push((off, cone.dim(), matches!(cone, Cone::Psd(_))));
    }
    for _ in 0..iters {
        let mut col = vec![0.0_f64; n];
        let mut row = vec![0.0_f64; m];
        for &(r, c, v) in &prog.a.triplets {
            let a = (e[r] * v * d[c]).abs();
            col[c] = col[c].max(a);
            row[r] = row[r].max(a);
        }
        for &(off, len, uniform) in &groups {
            if uniform {
                let mx = row[off..off + len].iter().cloned().fold(0.0, f64::max);
                row[off..off + len].iter_mut().for_each(|v| *v = mx);
            }
        }
        for (dj, cj) in d.iter_mut().zip(&col) {
            if *cj > 1e-8 {
                *dj = clamp(*dj / cj.sqrt());
            }
        }
        for (ei, ri) in e.iter_mut().zip(&row) {
            if *ri > 1e-8 {
                *ei = clamp(*ei / ri.sqrt());
            }
        }
    }
    let c_inf = prog.c.iter().zip(&d).fold(0.0_f64, |acc, (c, d)| acc.max((c * d).abs()));
    let cost = if c_inf > 1e-8 { (1.0 / c_inf).clamp(1e-4, 1e4) } else { 1.0 };
    Scaling { d, e, cost }
}

struct Workspace<'p> {
    prog: &'p ConicProgram,
    scaling: Scaling,
    a: Csr,
    b: Vec<f64>,
    c: Vec<f64>,
    cones: ConeSpec,
    /// per-row step size, before multiplication by the global `rho`
    row_weight: Vec<f64>,
    rho: f64,
    factor: Cholesky<f64, Dyn>,
    b_norm: f64,
    c_norm: f64,
}

impl<'p> Workspace<'p> {
    fn new(prog: &'p ConicProgram, settings: &SolverSettings) -> Result<Self> {
        let scaling = equilibrate(prog, settings.scaling_iters);
        let scaled: Vec<(usize, usize, f64)> =
            prog.a.triplets.iter().map(|&(r, c, v)| (r, c, scaling.e[r] * v * scaling.d[c])).collect();
        let a = SparseMatrix { nrows: prog.nrows(), ncols: prog.nvar, triplets: scaled }.to_csr();
        let b: Vec<f64> = prog.b.iter().zip(&scaling.e).map(|(b, e)| b * e).collect();
        let c: Vec<f64> = prog.c.iter().zip(&scaling.d).map(|(c, d)| c * d * scaling.cost).collect();
        let mut row_weight = vec![1.0; prog.nrows()];
        for (off, cone) in prog.cones.offsets() {
            if let Cone::Zero(len) = cone {
                row_weight[off..off + len].iter_mut().for_each(|w| *w = settings.equality_rho_scale);
            }
        }
        let factor = factor_kkt(&a, &row_weight, settings.rho, settings.sigma)?;
        Ok(Self {
            prog,
            b,
            c,
            cones: prog.cones.clone(),
            a,
            row_weight,
            rho: settings.rho,
            factor,
            b_norm: norm(&prog.b),
            c_norm: norm(&prog.c),
            scaling,
        })
    }

    fn run(&mut self, settings: &SolverSettings, observer: &mut dyn FnMut(&Snapshot<'_>)) -> Result<Solution> {
        let (m, n) = (self.prog.nrows(), self.prog.nvar);
        let mut xs = vec![0.0; n];
        let mut ss = vec![0.0; m];
        let mut lam = vec![0.0; m];
        let mut xs_prev = xs.clone();
        let mut lam_prev = lam.clone();

        let mut rhs_m = vec![0.0; m];
        let mut rhs_n = vec![0.0; n];
        let mut ax = vec![0.0; m];
        let mut s_relax = vec![0.0; m];

        let mut best: Option<Solution> = None;
        let mut best_score = f64::INFINITY;
        let mut last_progress_iter = 0usize;
        let mut progress_ref = f64::INFINITY;
        let mut last_adapt = 0usize;
        let mut adapt_interval = settings.adaptive_rho_interval;

        for k in 1..=settings.max_iters {
            xs_prev.copy_from_slice(&xs);
            lam_prev.copy_from_slice(&lam);

            // x-update: (sigma I + A^T R A) xt = sigma x - c + A^T (R (b - s) + lam)
            for i in 0..m {
                rhs_m[i] = self.rho * self.row_weight[i] * (self.b[i] - ss[i]) + lam[i];
            }
            self.a.tr_mul_vec_into(&rhs_m, &mut rhs_n);
            for j in 0..n {
                rhs_n[j] += settings.sigma * xs[j] - self.c[j];
            }
            let mut xt = DVector::from_column_slice(&rhs_n);
            self.factor.solve_mut(&mut xt);

            // s-tilde = b - A xt
            self.a.mul_vec_into(xt.as_slice(), &mut ax);
            let alpha = settings.alpha;
            for j in 0..n {
                xs[j] = alpha * xt[j] + (1.0 - alpha) * xs[j];
            }
            for i in 0..m {
                s_relax[i] = alpha * (self.b[i] - ax[i]) + (1.0 - alpha) * ss[i];
                ss[i] = s_relax[i] + lam[i] / (self.rho * self.row_weight[i]);
            }
            project_in_place(&mut ss, &self.cones)?;
            for i in 0..m {
                lam[i] += self.rho * self.row_weight[i] * (s_relax[i] - ss[i]);
            }

            if k % settings.check_interval != 0 && k != settings.max_iters {
                continue;
            }

            let sol = self.unscaled_solution(&xs, &ss, &lam, k, SolveStatus::MaxIters);
            observer(&Snapshot {
                iteration: k,
                x: &sol.x,
                y: &sol.y,
                s: &sol.s,
                primal_residual: sol.primal_residual,
                dual_residual: sol.dual_residual,
                duality_gap: sol.duality_gap,
                primal_objective: sol.primal_objective,
                dual_objective: sol.dual_objective,
            });

            if self.converged(&sol, settings) {
                return Ok(Solution { status: SolveStatus::Optimal, ..sol });
            }

            let score = sol.max_residual();
            if score < progress_ref - settings.stagnation_tol {
                progress_ref = score;
                last_progress_iter = k;
            }
            if k - last_progress_iter >= settings.stagnation_window {
                if let Some(status) = self.certificate(&xs, &xs_prev, &lam, &lam_prev, settings)? {
                    return Ok(Solution { status, ..sol });
                }
            }

            if settings.adaptive_rho && k - last_adapt >= adapt_interval {
                let (p_ratio, d_ratio) = self.normalized_residuals(&xs, &ss, &lam);
                let step = (p_ratio / d_ratio.max(1e-300)).sqrt();
                let tol = settings.adaptive_rho_tolerance;
                if step > tol || step < 1.0 / tol {
                    let new_rho = (self.rho * step).clamp(1e-6, 1e6);
                    if new_rho != self.rho {
                        self.rho = new_rho;
                        self.factor = factor_kkt(&self.a, &self.row_weight, self.rho, settings.sigma)?;
                        last_adapt = k;
                        // back off so repeated corrections cannot oscillate
                        adapt_interval *= 2;
                    }
                }
            }

            if score < best_score {
                best_score = score;
                best = Some(sol);
            }
        }
        let mut best = best.expect("at least one residual check runs");
        best.iterations = settings.max_iters;
        best.final_rho = self.rho;
        Ok(best)
    }

    fn converged(&self, sol: &Solution, settings: &SolverSettings) -> bool {
        let p = sol.primal_residual * (1.0 + self.b_norm);
        let d = sol.dual_residual * (1.0 + self.c_norm);
        let (cx, by) = (sol.primal_objective, sol.dual_objective);
        let g = sol.duality_gap * (1.0 + cx.abs() + by.abs());
        p <= settings.eps_abs + settings.eps_rel * self.b_norm
            && d <= settings.eps_abs + settings.eps_rel * self.c_norm
            && g <= settings.eps_abs + settings.eps_rel * (cx.abs() + by.abs())
    }

    fn unscaled_solution(
        &self,
        xs: &[f64],
        ss: &[f64],
        lam: &[f64],
        iterations: usize,
        status: SolveStatus,
    ) -> Solution {
        let sc = &self.scaling;
        let x: Vec<f64> = xs.iter().zip(&sc.d).map(|(x, d)| x * d).collect();
        let s: Vec<f64> = ss.iter().zip(&sc.e).map(|(s, e)| s / e).collect();
        let y: Vec<f64> = lam.iter().zip(&sc.e).map(|(l, e)| -l * e / sc.cost).collect();
        let prog = self.prog;
        let ax = prog.a.mul_vec(&x);
        let rp: Vec<f64> = (0..prog.nrows()).map(|i| ax[i] + s[i] - prog.b[i]).collect();
        let aty = prog.a.tr_mul_vec(&y);
        let rd: Vec<f64> = aty.iter().zip(&prog.c).map(|(a, c)| a + c).collect();
        let cx = dot(&prog.c, &x);
        let by = dot(&prog.b, &y);
        Solution {
            primal_residual: norm(&rp) / (1.0 + self.b_norm),
            dual_residual: norm(&rd) / (1.0 + self.c_norm),
            duality_gap: (cx + by).abs() / (1.0 + cx.abs() + by.abs()),
            x,
            y,
            s,
            status,
            iterations,
            primal_objective: cx,
            dual_objective: -by,
            final_rho: self.rho,
        }
    }

    /// Primal and dual residuals of the scaled iterates, each normalized by
    /// the magnitude of its terms.
    fn normalized_residuals(&self, xs: &[f64], ss: &[f64], lam: &[f64]) -> (f64, f64) {
        let m = self.b.len();
        let mut ax = vec![0.0; m];
        self.a.mul_vec_into(xs, &mut ax);
        let rp: Vec<f64> = (0..m).map(|i| ax[i] + ss[i] - self.b[i]).collect();
        let p_scale = norm(&ax).max(norm(ss)).max(norm(&self.b)).max(1e-12);
        let y: Vec<f64> = lam.iter().map(|l| -l).collect();
        let mut aty = vec![0.0; xs.len()];
        self.a.tr_mul_vec_into(&y, &mut aty);
        let rd: Vec<f64> = aty.iter().zip(&self.c).map(|(a, c)| a + c).collect();
        let d_scale = norm(&aty).max(norm(&self.c)).max(1e-12);
        (norm(&rp) / p_scale, norm(&rd) / d_scale)
    }

    /// Tests the iterate differences for a primal or dual infeasibility certificate.
    fn certificate(
        &self,
        xs: &[f64],
        xs_prev: &[f64],
        lam: &[f64],
        lam_prev: &[f64],
        settings: &SolverSettings,
    ) -> Result<Option<SolveStatus>> {
        let prog = self.prog;
        let sc = &self.scaling;
        let tol = settings.infeasibility_tol;

        let dy: Vec<f64> = (0..prog.nrows()).map(|i| -(lam[i] - lam_prev[i]) * sc.e[i] / sc.cost).collect();
        let dy_norm = norm(&dy);
        if dy_norm > 1e-12 {
            let aty = prog.a.tr_mul_vec(&dy);
            let mut proj = dy.clone();
            project_dual_in_place(&mut proj, &prog.cones)?;
            let dual_dist = norm(&dy.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>());
            if norm(&aty) <= tol * dy_norm && dot(&prog.b, &dy) < -tol * dy_norm && dual_dist <= tol * dy_norm * 1e3 {
                return Ok(Some(SolveStatus::Infeasible));
            }
        }

        let dx: Vec<f64> = (0..prog.nvar).map(|j| (xs[j] - xs_prev[j]) * sc.d[j]).collect();
        let dx_norm = norm(&dx);
        if dx_norm > 1e-12 {
            let neg_adx: Vec<f64> = prog.a.mul_vec(&dx).into_iter().map(|v| -v).collect();
            let dist = distance_to_cone(&neg_adx, &prog.cones)?;
            if dist <= tol * dx_norm * 1e3 && dot(&prog.c, &dx) < -tol * dx_norm {
                return Ok(Some(SolveStatus::Unbounded));
            }
        }
        Ok(None)
    }
}

fn factor_kkt(a: &Csr, row_weight: &[f64], rho: f64, sigma: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = a.ncols;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = sigma;
    }
    for i in 0..a.nrows {
        let (cols, vals) = a.row(i);
        let w = rho * row_weight[i];
        for (p, &cp) in cols.iter().enumerate() {
            let vp = w * vals[p];
            for (q, &cq) in cols.iter().enumerate() {
                // lower triangle only; the factorization never reads the rest
                if cq <= cp {
                    m[(cp, cq)] += vp * vals[q];
                }
            }
        }
    }
    Cholesky::new(m).ok_or_else(|| Error::NumericalFailure("KKT matrix factorization failed".into()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::program::{AffineExpr, ProgramBuilder};

    fn lp_min_x_geq(bound: f64) -> ConicProgram {
        // min x s.t. x - bound >= 0
        let mut b = ProgramBuilder::new(1);
        b.set_objective(0, 1.0);
        b.add_nonneg(&[AffineExpr { constant: -bound, terms: vec![(0, 1.0)] }]);
        b.build().unwrap()
    }

    #[test]
    fn one_variable_lp() {
        let sol = solve(&lp_min_x_geq(1.0), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-5, "{:?}", sol.x);
    }

    #[test]
    fn settings_are_validated() {
        let bad = SolverSettings { alpha: 2.0, ..SolverSettings::default() };
        assert!(solve(&lp_min_x_geq(1.0), &bad).is_err());
        let bad = SolverSettings { eps_abs: 0.0, ..SolverSettings::default() };
        assert!(solve(&lp_min_x_geq(1.0), &bad).is_err());
    }

    #[test]
    fn infeasible_lp_is_detected() {
        // x >= 1 and -x >= 0
        let mut b = ProgramBuilder::new(1);
        b.set_objective(0, 1.0);
        b.add_nonneg(&[
            AffineExpr { constant: -1.0, terms: vec![(0, 1.0)] },
            AffineExpr { constant: 0.0, terms: vec![(0, -1.0)] },
        ]);
        let settings = SolverSettings { max_iters: 20_000, ..SolverSettings::default() };
        let sol = solve(&b.build().unwrap(), &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_lp_is_detected() {
        // min -x s.t. x >= 0
        let mut b = ProgramBuilder::new(1);
        b.set_objective(0, -1.0);
        b.add_nonneg(&[AffineExpr::term(0, 1.0)]);
        let settings = SolverSettings { max_iters: 20_000, ..SolverSettings::default() };
        let sol = solve(&b.build().unwrap(), &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn iteration_budget_reports_max_iters() {
        let settings = SolverSettings { max_iters: 3, check_interval: 1, ..SolverSettings::with_tolerance(1e-14) };
        let sol = solve(&lp_min_x_geq(1.0), &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIters);
        assert_eq!(sol.iterations, 3);
        assert!(sol.primal_residual.is_finite());
    }
}
