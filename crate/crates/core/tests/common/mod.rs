#![allow(dead_code)]

use fairpca::sdp::{sym_entry, AffineExpr, ConicProgram, ProgramBuilder};
use nalgebra::DMatrix;
use rand::Rng;

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations,
/// independent of the library's eigensolver. Returned in descending order.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-scale..scale);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}

/// `max <C, P>  s.t. trace P <= d, 0 <= P <= I` as a minimization program.
pub fn spectahedron_program(c: &[Vec<f64>], d: usize) -> ConicProgram {
    let m = c.len();
    let nvar = m * (m + 1) / 2;
    let mut b = ProgramBuilder::new(nvar);
    for i in 0..m {
        for j in i..m {
            let e = sym_entry(0, m, i, j);
            let (var, coef) = e.terms[0];
            // <C, P> counts off-diagonal entries twice
            let mult = if i == j { 1.0 } else { 2.0 };
            b.add_objective(var, -mult * c[i][j] * coef);
        }
    }
    let mut trace = AffineExpr::constant(d as f64);
    for i in 0..m {
        trace.add_term(fairpca::sdp::svec_index(m, i, i), -1.0);
    }
    b.add_nonneg(&[trace]);
    b.add_psd(m, |i, j| sym_entry(0, m, i, j));
    b.add_psd(m, |i, j| {
        let e = sym_entry(0, m, i, j);
        AffineExpr { constant: if i == j { 1.0 } else { 0.0 }, terms: vec![(e.terms[0].0, -e.terms[0].1)] }
    });
    b.build().unwrap()
}

/// Closed form: sum of the `d` largest eigenvalues clipped below at zero.
pub fn spectahedron_value(c: &[Vec<f64>], d: usize) -> f64 {
    jacobi_eigenvalues(c).iter().take(d).map(|l| l.max(0.0)).sum()
}

/// Scaled CDF gap `|#pos(<= t) * n_neg - #neg(<= t) * n_pos|` maximized over
/// every threshold, including one below all samples.
pub fn ks_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let (np, nn) = (pos.len() as i64, neg.len() as i64);
    let mut best = 0i64;
    for &t in pos.iter().chain(neg) {
        let cp = pos.iter().filter(|&&v| v <= t).count() as i64;
        let cn = neg.iter().filter(|&&v| v <= t).count() as i64;
        best = best.max((cp * nn - cn * np).abs());
    }
    best as f64 / (np * nn) as f64
}

/// Exhaustive grid over all combinations of observed coordinate values.
pub fn threshold_oracle(u: &DMatrix<f64>, z: &[i8]) -> f64 {
    let (n, d) = u.shape();
    let np = z.iter().filter(|&&l| l == 1).count() as i64;
    let nn = n as i64 - np;
    let values: Vec<Vec<f64>> = (0..d).map(|j| u.column(j).iter().copied().collect()).collect();
    let mut best = 0i64;
    let mut idx = vec![0usize; d];
    loop {
        let point: Vec<f64> = (0..d).map(|j| values[j][idx[j]]).collect();
        let (mut cp, mut cn) = (0i64, 0i64);
        for i in 0..n {
            if (0..d).all(|j| u[(i, j)] <= point[j]) {
                if z[i] == 1 {
                    cp += 1;
                } else {
                    cn += 1;
                }
            }
        }
        best = best.max((cp * nn - cn * np).abs());
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    best as f64 / (np * nn) as f64
}

pub fn auc_oracle(scores: &[f64], labels: &[i8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == -1 {
                pairs += 1;
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

pub fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<i8> {
    let mut z: Vec<i8> = (0..n).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
    z[0] = 1;
    z[n - 1] = -1;
    z
}

/// Integer-valued samples so ties are frequent.
pub fn coarse(rng: &mut impl Rng) -> f64 {
    rng.gen_range(0..6) as f64
}

/// Hand-computed `(delta_hat, n, vc_dim, delta_prob, bound, confidence)`.
pub fn bound_cases() -> Vec<(f64, usize, usize, f64, f64, f64)> {
    vec![
        (0.0, 10_000, 4, 0.05, 0.21, 1.0 - (-12.5f64).exp()),
        (0.3, 100, 6, 0.1, 0.3 + 8.0 * 0.06f64.sqrt() + 0.1, 1.0 - (-0.5f64).exp()),
        (1.0, 1, 1, 2.0, 11.0, 1.0 - (-2.0f64).exp()),
    ]
}

/// Violations of the hand values and of monotonicity in each argument.
pub fn bound_failures() -> Vec<String> {
    use fairpca::fairness::prop2_bound;
    let mut bad = Vec::new();
    for (h, n, v, dp, want_b, want_c) in bound_cases() {
        let (b, c) = prop2_bound(h, n, v, dp).unwrap();
        if (b - want_b).abs() > 1e-12 || (c - want_c).abs() > 1e-14 {
            bad.push(format!("case ({h}, {n}, {v}, {dp}): got ({b}, {c}) want ({want_b}, {want_c})"));
        }
    }
    let hats = [0.0, 0.1, 0.5, 1.0];
    let ns = [1usize, 10, 100, 10_000, 1_000_000];
    let vcs = [1usize, 3, 6, 20];
    let probs = [0.01, 0.05, 0.2, 1.0];
    let f = |h: f64, n: usize, v: usize, dp: f64| prop2_bound(h, n, v, dp).unwrap();
    for &h in &hats {
        for &v in &vcs {
            for &dp in &probs {
                for w in ns.windows(2) {
                    let ((a, ca), (b, cb)) = (f(h, w[0], v, dp), f(h, w[1], v, dp));
                    if b > a || cb < ca {
                        bad.push(format!("not monotone in n at ({h}, {:?}, {v}, {dp})", w));
                    }
                }
            }
        }
    }
    for &n in &ns {
        for &dp in &probs {
            for &h in &hats {
                for w in vcs.windows(2) {
                    if f(h, n, w[1], dp).0 < f(h, n, w[0], dp).0 {
                        bad.push(format!("not monotone in vc_dim at ({h}, {n}, {:?}, {dp})", w));
                    }
                }
            }
            for &v in &vcs {
                for w in hats.windows(2) {
                    if f(w[1], n, v, dp).0 < f(w[0], n, v, dp).0 {
                        bad.push(format!("not monotone in delta_hat at ({:?}, {n}, {v}, {dp})", w));
                    }
                }
            }
        }
        for &v in &vcs {
            for w in probs.windows(2) {
                let ((a, ca), (b, cb)) = (f(0.1, n, v, w[0]), f(0.1, n, v, w[1]));
                if b < a || cb < ca {
                    bad.push(format!("not monotone in delta_prob at ({n}, {v}, {:?})", w));
                }
            }
        }
    }
    bad
}
