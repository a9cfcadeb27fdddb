mod common;

use common::{jacobi_eigenvalues, random_symmetric};
use fairpca::linalg::{psd_sqrt, spectral_norm, spectral_shift_norm, sym_eig, SymMatrix};
use fairpca::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_sym(a: &[Vec<f64>]) -> SymMatrix {
    let n = a.len();
    SymMatrix::from_row_slice(n, &a.concat()).unwrap()
}

fn oracle_norm(a: &[Vec<f64>]) -> f64 {
    let ev = jacobi_eigenvalues(a);
    ev[0].abs().max(ev[ev.len() - 1].abs())
}

fn random_orthonormal(rng: &mut impl Rng, p: usize, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, d, |_, _| rng.gen_range(-1.0..1.0));
    g.qr().q()
}

#[test]
fn shift_norm_examples() {
    let a = SymMatrix::from_diagonal(&[2.0, -5.0]);
    assert!((spectral_shift_norm(&a, 5.0).unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(spectral_shift_norm(&SymMatrix::zeros(3), 1.0).unwrap(), 0.0);
    assert!(matches!(spectral_shift_norm(&a, 4.0), Err(Error::PreconditionViolated(_))));
}

#[test]
fn shift_norm_equals_spectral_norm_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=10);
        let a = random_symmetric(&mut rng, n, 3.0);
        let norm = oracle_norm(&a);
        let phi = norm + rng.gen_range(0.0..2.0);
        let s = to_sym(&a);
        let shifted = spectral_shift_norm(&s, phi).unwrap();
        assert!((shifted - norm).abs() <= 1e-10, "{shifted} vs {norm}");
        assert!((spectral_norm(&s).unwrap() - norm).abs() <= 1e-10);
    }
}

#[test]
fn compressed_shift_identity_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let p = rng.gen_range(2..=12);
        let d = rng.gen_range(1..p);
        let q = to_sym(&random_symmetric(&mut rng, p, 2.0));
        let v = random_orthonormal(&mut rng, p, d);
        let phi = spectral_norm(&q).unwrap();
        let lhs = spectral_norm(&q.congruence(&v).unwrap()).unwrap();
        let plus = spectral_norm(&q.shifted(phi).congruence(&v).unwrap()).unwrap();
        let minus = spectral_norm(&q.negated().shifted(phi).congruence(&v).unwrap()).unwrap();
        assert!((lhs - (plus.max(minus) - phi)).abs() <= 1e-8, "{lhs} vs {}", plus.max(minus) - phi);
    }
}

#[test]
fn psd_sqrt_reconstructs_shifted_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let p = rng.gen_range(1..=8);
        let q = to_sym(&random_symmetric(&mut rng, p, 1.0));
        let phi = spectral_norm(&q).unwrap();
        for a in [q.shifted(phi), q.negated().shifted(phi)] {
            let m = psd_sqrt(&a, 1e-10).unwrap();
            let err = (&m * m.transpose() - a.as_matrix()).abs().max();
            assert!(err <= 1e-8 * a.max_abs().max(1.0), "{err}");
        }
    }
    let m = psd_sqrt(&SymMatrix::from_diagonal(&[4.0, 0.0]), 1e-10).unwrap();
    assert_eq!(m.shape(), (2, 1));
    assert!((m[(0, 0)].abs() - 2.0).abs() < 1e-12 && m[(1, 0)] == 0.0);
    assert!(matches!(
        psd_sqrt(&SymMatrix::from_diagonal(&[1.0, -1.0]), 1e-10),
        Err(Error::NotPositiveSemidefinite { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eigendecomposition_matches_oracle(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(&mut rng, n, 5.0);
        let eig = sym_eig(&to_sym(&a)).unwrap();
        let oracle = jacobi_eigenvalues(&a);
        for (x, y) in eig.eigenvalues.iter().zip(&oracle) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        let v = &eig.eigenvectors;
        let ortho = (v.transpose() * v - DMatrix::identity(n, n)).abs().max();
        prop_assert!(ortho <= 1e-10);
        let recon = (eig.reconstruct() - to_sym(&a).as_matrix()).abs().max();
        prop_assert!(recon <= 1e-9 * 5.0 * n as f64);
    }
}
