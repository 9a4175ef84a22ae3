//! Dense complex linear algebra shared by the channel, grouping and estimator
//! code: Sylvester-Hadamard construction, condition numbers and least-squares
//! solves on Gram matrices.
//!
//! Matrices are plain `nalgebra` dense matrices over `Complex64`; the
//! constructors here add the finiteness check the rest of the crate relies on.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Relative threshold on `sigma_min / sigma_max` below which a matrix is
/// treated as singular.
pub const RANK_EPS: f64 = 1e-12;

/// Builds a matrix from row-major entries, rejecting NaN/Inf.
pub fn checked_matrix(rows: usize, cols: usize, row_major: &[Complex64]) -> Result<ComplexMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch(format!("empty {rows}x{cols} matrix")));
    }
    if row_major.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} entries for a {rows}x{cols} matrix",
            row_major.len()
        )));
    }
    let m = DMatrix::from_row_slice(rows, cols, row_major);
    ensure_finite(&m)?;
    Ok(m)
}

/// Builds a vector, rejecting NaN/Inf.
pub fn checked_vector(entries: &[Complex64]) -> Result<ComplexVector> {
    if entries.is_empty() {
        return Err(Error::DimensionMismatch("empty vector".into()));
    }
    let v = DVector::from_column_slice(entries);
    ensure_finite(&v)?;
    Ok(v)
}

pub fn ensure_finite<R, C, S>(m: &nalgebra::Matrix<Complex64, R, C, S>) -> Result<()>
where
    R: nalgebra::Dim,
    C: nalgebra::Dim,
    S: nalgebra::RawStorage<Complex64, R, C>,
{
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let z = m[(r, c)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Complex matrix product computed as four real products, which hit the
/// vectorized `f64` GEMM kernel instead of the generic complex loop.
pub fn cgemm(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    assert_eq!(a.ncols(), b.nrows(), "cgemm dimension mismatch");
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

/// `a^H b` via [`cgemm`].
pub fn cgemm_adjoint(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    cgemm(&a.adjoint(), b)
}

/// Sylvester-ordered Hadamard matrix with `+1`/`-1` entries.
///
/// Entry `(i, j)` is `(-1)^popcount(i & j)`, which is exactly the recursive
/// `[[H, H], [H, -H]]` construction.
pub fn hadamard(n: usize) -> Result<DMatrix<i32>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            1
        } else {
            -1
        }
    }))
}

/// `hadamard(n) / sqrt(n)`, a real unitary matrix.
pub fn unitary_hadamard(n: usize) -> Result<ComplexMatrix> {
    let h = hadamard(n)?;
    let scale = 1.0 / (n as f64).sqrt();
    Ok(h.map(|x| Complex64::new(f64::from(x) * scale, 0.0)))
}

/// Outcome of a condition-number evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conditioning {
    Finite(f64),
    /// `sigma_min < RANK_EPS * sigma_max`.
    Singular,
}

impl Conditioning {
    /// The condition number, with `Singular` mapped to `+inf`.
    pub fn value(self) -> f64 {
        match self {
            Conditioning::Finite(c) => c,
            Conditioning::Singular => f64::INFINITY,
        }
    }

    pub fn is_singular(self) -> bool {
        matches!(self, Conditioning::Singular)
    }

    /// The worse of two conditionings.
    pub fn worst(self, other: Conditioning) -> Conditioning {
        match (self, other) {
            (Conditioning::Finite(a), Conditioning::Finite(b)) => Conditioning::Finite(a.max(b)),
            _ => Conditioning::Singular,
        }
    }
}

fn is_hermitian(g: &ComplexMatrix) -> bool {
    let n = g.nrows();
    let scale = g.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in i..n {
            if (g[(i, j)] - g[(j, i)].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

/// Singular values of a square matrix. Hermitian inputs go through the
/// eigenvalue route, where singular values are the eigenvalue magnitudes.
pub fn singular_values(g: &ComplexMatrix) -> Result<Vec<f64>> {
    if g.nrows() != g.ncols() {
        return Err(Error::NotSquare { rows: g.nrows(), cols: g.ncols() });
    }
    let mut sv: Vec<f64> = if is_hermitian(g) {
        g.symmetric_eigenvalues().iter().map(|x| x.abs()).collect()
    } else {
        g.singular_values().iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// `sigma_max / sigma_min`, or `Singular` below the rank threshold.
pub fn condition_number(g: &ComplexMatrix) -> Result<Conditioning> {
    let sv = singular_values(g)?;
    Ok(conditioning_from_singular_values(&sv))
}

pub(crate) fn conditioning_from_singular_values(sv: &[f64]) -> Conditioning {
    let max = sv.iter().copied().fold(0.0f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min >= RANK_EPS * max) {
        Conditioning::Singular
    } else {
        Conditioning::Finite(max / min)
    }
}

/// Solves `gram * x = rhs` for a Hermitian positive-(semi)definite Gram
/// matrix. Fails with [`Error::Singular`] when the matrix does not pass the
/// rank threshold.
pub fn ls_solve(gram: &ComplexMatrix, rhs: &ComplexVector) -> Result<ComplexVector> {
    check_system(gram, rhs)?;
    if condition_number(gram)?.is_singular() {
        return Err(Error::Singular);
    }
    solve_hpd(gram, rhs)
}

fn check_system(gram: &ComplexMatrix, rhs: &ComplexVector) -> Result<()> {
    if gram.nrows() != gram.ncols() {
        return Err(Error::NotSquare { rows: gram.nrows(), cols: gram.ncols() });
    }
    if rhs.len() != gram.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} for a {}x{} system",
            rhs.len(),
            gram.nrows(),
            gram.ncols()
        )));
    }
    Ok(())
}

/// Cholesky solve with a QR fallback. No rank check.
pub(crate) fn solve_hpd(gram: &ComplexMatrix, rhs: &ComplexVector) -> Result<ComplexVector> {
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    gram.clone().qr().solve(rhs).ok_or(Error::Singular)
}

/// Minimum-norm least-squares solution of `a * x = b` via the SVD, with
/// singular values below `RANK_EPS * sigma_max` discarded.
pub fn min_norm_solve(a: &ComplexMatrix, b: &ComplexVector) -> Result<ComplexVector> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} for a {}x{} system",
            b.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Ok(ComplexVector::zeros(a.ncols()));
    }
    svd.solve(b, RANK_EPS * smax)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Solves a Gram system with a precomputed conditioning: the stable
/// factorization when nonsingular, the minimum-norm solve otherwise.
pub(crate) fn solve_with_conditioning(
    gram: &ComplexMatrix,
    rhs: &ComplexVector,
    cond: Conditioning,
) -> Result<ComplexVector> {
    check_system(gram, rhs)?;
    match cond {
        Conditioning::Finite(_) => solve_hpd(gram, rhs),
        Conditioning::Singular => min_norm_solve(gram, rhs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn cgemm_matches_generic_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(7, 5, &mut rng);
        let b = random_matrix(5, 9, &mut rng);
        assert!((cgemm(&a, &b) - &a * &b).norm() < 1e-13);
        assert!((cgemm_adjoint(&b, &b) - b.adjoint() * &b).norm() < 1e-13);
    }

    #[test]
    fn hadamard_small_cases() {
        assert_eq!(hadamard(1).unwrap(), DMatrix::from_element(1, 1, 1));
        assert_eq!(hadamard(2).unwrap(), DMatrix::from_row_slice(2, 2, &[1, 1, 1, -1]));
        let h4 = hadamard(4).unwrap();
        assert_eq!(&h4 * h4.transpose(), DMatrix::identity(4, 4) * 4);
    }

    #[test]
    fn hadamard_rejects_non_powers() {
        for n in [0, 3, 6, 12, 100] {
            assert_eq!(hadamard(n), Err(Error::NotPowerOfTwo(n)));
        }
    }

    #[test]
    fn hadamard_first_row_and_column_positive() {
        let h = hadamard(64).unwrap();
        assert!(h.row(0).iter().all(|&x| x == 1));
        assert!(h.column(0).iter().all(|&x| x == 1));
    }

    #[test]
    fn unitary_hadamard_entries() {
        let p = unitary_hadamard(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for z in p.iter() {
            assert!((z.re.abs() - s).abs() < 1e-15 && z.im == 0.0);
        }
        let p4 = unitary_hadamard(4).unwrap();
        let d = &p4 * p4.adjoint() - ComplexMatrix::identity(4, 4);
        assert!(d.iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn unitary_hadamard_16_has_unit_singular_values() {
        // General SVD (not the Hermitian shortcut) as the oracle.
        let p = unitary_hadamard(16).unwrap();
        for s in p.singular_values().iter() {
            assert!((s - 1.0).abs() <= 1e-10, "{s}");
        }
    }

    #[test]
    fn condition_number_examples() {
        for n in [1, 3, 7] {
            let id = ComplexMatrix::identity(n, n);
            assert_eq!(condition_number(&id).unwrap(), Conditioning::Finite(1.0));
        }
        let d = ComplexMatrix::from_diagonal(&DVector::from_vec(vec![c(4.0), c(1.0)]));
        match condition_number(&d).unwrap() {
            Conditioning::Finite(v) => assert!((v - 4.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let r1 = DMatrix::from_element(2, 2, c(1.0));
        assert_eq!(condition_number(&r1).unwrap(), Conditioning::Singular);
        assert_eq!(
            condition_number(&ComplexMatrix::zeros(3, 3)).unwrap(),
            Conditioning::Singular
        );
    }

    #[test]
    fn condition_number_rejects_non_square() {
        let m = ComplexMatrix::zeros(2, 3);
        assert_eq!(condition_number(&m), Err(Error::NotSquare { rows: 2, cols: 3 }));
    }

    #[test]
    fn condition_number_non_hermitian_uses_svd() {
        // [[1, 10], [0, 1]]: singular values satisfy s1*s2 = 1, s1^2 + s2^2 = 102.
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0), c(10.0), c(0.0), c(1.0)]);
        let s1 = ((102.0 + (102.0f64 * 102.0 - 4.0).sqrt()) / 2.0).sqrt();
        let expected = s1 * s1;
        let got = condition_number(&m).unwrap().value();
        assert!((got - expected).abs() / expected < 1e-10);
    }

    #[test]
    fn ls_solve_identity_and_scaling() {
        let v = DVector::from_vec(vec![c(1.0), Complex64::new(0.5, -2.0), c(-3.0)]);
        let id = ComplexMatrix::identity(3, 3);
        assert!((ls_solve(&id, &v).unwrap() - &v).norm() < 1e-15);
        let two = id * c(2.0);
        assert!((ls_solve(&two, &v).unwrap() - &v / c(2.0)).norm() < 1e-15);
    }

    #[test]
    fn ls_solve_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(12, 8, &mut rng);
        let gram = a.adjoint() * &a;
        let x = random_matrix(8, 1, &mut rng).column(0).into_owned();
        let rhs = &gram * &x;
        let got = ls_solve(&gram, &rhs).unwrap();
        assert!((got - &x).norm() / x.norm() < 1e-10);
    }

    #[test]
    fn ls_solve_singular_and_mismatch() {
        let r1 = DMatrix::from_element(2, 2, c(1.0));
        let v = DVector::from_vec(vec![c(1.0), c(1.0)]);
        assert_eq!(ls_solve(&r1, &v), Err(Error::Singular));
        let v3 = DVector::from_vec(vec![c(1.0); 3]);
        assert!(matches!(
            ls_solve(&ComplexMatrix::identity(2, 2), &v3),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn min_norm_solve_on_rank_deficient_gram() {
        // rank-1 gram [[1,1],[1,1]] with consistent rhs: min-norm answer is (1,1).
        let g = DMatrix::from_element(2, 2, c(1.0));
        let b = DVector::from_vec(vec![c(2.0), c(2.0)]);
        let x = min_norm_solve(&g, &b).unwrap();
        assert!((x[0] - c(1.0)).norm() < 1e-12 && (x[1] - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn checked_constructors_reject_nan() {
        let bad = [c(1.0), Complex64::new(f64::NAN, 0.0)];
        assert_eq!(checked_vector(&bad), Err(Error::NonFinite { row: 1, col: 0 }));
        assert!(checked_matrix(1, 2, &bad).is_err());
        assert!(checked_matrix(1, 3, &bad).is_err());
        assert!(checked_matrix(2, 1, &[c(1.0), c(2.0)]).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn condition_number_is_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(10, 6, &mut rng);
                let g = a.adjoint() * &a;
                let c1 = condition_number(&g).unwrap().value();
                let c2 = condition_number(&(&g * c(scale))).unwrap().value();
                prop_assert!((c1 - c2).abs() <= 1e-9 * c1);
                prop_assert!(c1 >= 1.0);
            }

            #[test]
            fn ls_solve_roundtrip_when_well_conditioned(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(16, 8, &mut rng);
                let g = a.adjoint() * &a;
                prop_assume!(condition_number(&g).unwrap().value() <= 1e6);
                let x = random_matrix(8, 1, &mut rng).column(0).into_owned();
                let got = ls_solve(&g, &(&g * &x)).unwrap();
                prop_assert!((got - &x).norm() <= 1e-9 * x.norm());
            }
        }
    }
}
