//! Dense matrix kernels: Moore-Penrose pseudo-inverses, the matrix-inversion
//! lemma, and the small helpers the covariance recursion needs.
//!
//! Every function here is pure. Inputs are borrowed and a fresh matrix is
//! returned.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense real matrix used across the crate.
pub type Matrix = DMatrix<f64>;

/// Largest accepted condition number of `A*A^T` in [`pinv_full_row_rank`].
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Default truncation tolerance for [`pinv_svd`]: `max(rows, cols) * eps`.
pub fn default_svd_tol(a: &Matrix) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON
}

pub(crate) fn ensure_finite(a: &Matrix, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_square(a: &Matrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

/// Condition number of a symmetric matrix from its eigenvalues.
///
/// Returns `+inf` when the smallest eigenvalue is not positive.
pub fn symmetric_condition(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, refused when the
/// condition estimate exceeds `limit`.
pub(crate) fn spd_inverse(a: &Matrix, limit: f64) -> Result<Matrix> {
    let cond = symmetric_condition(a);
    if !(cond <= limit) {
        return Err(Error::SingularGram { cond });
    }
    let chol = a.clone().cholesky().ok_or(Error::SingularGram { cond })?;
    Ok(symmetrize_unchecked(&chol.inverse()))
}

/// `A^+ = A^T (A A^T)^{-1}` for a matrix with full row rank.
///
/// Fails with [`Error::SingularGram`] when the condition estimate of `A A^T`
/// exceeds [`GRAM_CONDITION_LIMIT`]; callers can fall back to [`pinv_svd`].
pub fn pinv_full_row_rank(a: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "pinv_full_row_rank input")?;
    let gram = a * a.transpose();
    let gram_inv = spd_inverse(&symmetrize_unchecked(&gram), GRAM_CONDITION_LIMIT)?;
    Ok(a.transpose() * gram_inv)
}

/// SVD pseudo-inverse. Singular values below `tol * sigma_max` are dropped.
pub fn pinv_svd(a: &Matrix, tol: f64) -> Matrix {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Matrix::zeros(cols, rows);
    }
    let cutoff = tol.max(0.0) * sigma_max;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Matrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            // out += v_i * u_i^T / s
            out += (v_t.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    out
}

/// `E = (A^{-1} + B C^{-1} D)^{-1}` evaluated through the inversion lemma
/// `E = A - A B (D A B + C)^{-1} D A`.
///
/// Only `D A B + C` is inverted, which is the point: with `C` small (a scalar
/// in the recursive estimator) this avoids inverting anything of size `A`.
pub fn woodbury(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<Matrix> {
    ensure_square(a)?;
    ensure_square(c)?;
    let n = a.nrows();
    let k = c.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "woodbury B rows",
            expected: n,
            actual: b.nrows(),
        });
    }
    if b.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "woodbury B cols",
            expected: k,
            actual: b.ncols(),
        });
    }
    if d.nrows() != k || d.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "woodbury D shape",
            expected: k * n,
            actual: d.nrows() * d.ncols(),
        });
    }
    let ab = a * b;
    let da = d * a;
    let inner = d * &ab + c;
    let inner_inv = inner.try_inverse().ok_or(Error::SingularInner)?;
    if inner_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInner);
    }
    Ok(a - ab * inner_inv * da)
}

/// Sum of the diagonal.
pub fn trace(a: &Matrix) -> Result<f64> {
    ensure_square(a)?;
    Ok(a.trace())
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &Matrix) -> Result<Matrix> {
    ensure_square(a)?;
    Ok(symmetrize_unchecked(a))
}

pub(crate) fn symmetrize_unchecked(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// In-place variant used on the estimator hot path.
pub(crate) fn symmetrize_in_place(a: &mut Matrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Frobenius norm of `a - b` divided by the Frobenius norm of `b`
/// (absolute when `b` is zero).
pub fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pinv_identity_and_diagonal() {
        let i2 = Matrix::identity(2, 2);
        assert_relative_eq!(pinv_full_row_rank(&i2).unwrap(), i2, epsilon = 1e-15);

        let a = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let expected = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert_relative_eq!(pinv_full_row_rank(&a).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn pinv_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random(3, 5, &mut rng);
            let ap = pinv_full_row_rank(&a).unwrap();
            assert!((&a * &ap * &a - &a).norm() < 1e-10);
        }
    }

    #[test]
    fn pinv_rejects_rank_deficient() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(
            pinv_full_row_rank(&a),
            Err(Error::SingularGram { .. })
        ));
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(pinv_full_row_rank(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn svd_pinv_cases() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(pinv_svd(&z, default_svd_tol(&z)), z);

        let i3 = Matrix::identity(3, 3);
        assert_relative_eq!(pinv_svd(&i3, default_svd_tol(&i3)), i3, epsilon = 1e-15);

        let ones = Matrix::from_element(2, 2, 1.0);
        let p = pinv_svd(&ones, default_svd_tol(&ones));
        assert_relative_eq!(p, Matrix::from_element(2, 2, 0.25), epsilon = 1e-14);
        // Penrose conditions
        assert!((&ones * &p * &ones - &ones).norm() < 1e-14);
        assert!((&p * &ones * &p - &p).norm() < 1e-14);
        let ap = &ones * &p;
        assert!((&ap - ap.transpose()).norm() < 1e-14);
        let pa = &p * &ones;
        assert!((&pa - pa.transpose()).norm() < 1e-14);
    }

    #[test]
    fn woodbury_trivial_cases() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = Matrix::zeros(2, 1);
        let c = Matrix::from_element(1, 1, 3.0);
        let d = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_relative_eq!(woodbury(&a, &b, &c, &d).unwrap(), a, epsilon = 1e-15);

        let one = Matrix::from_element(1, 1, 1.0);
        let e = woodbury(&one, &one, &one, &one).unwrap();
        assert_relative_eq!(e[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn woodbury_against_direct_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(4, 4, &mut rng) + Matrix::identity(4, 4) * 4.0;
            let c = random(2, 2, &mut rng) + Matrix::identity(2, 2) * 3.0;
            let b = random(4, 2, &mut rng);
            let d = random(2, 4, &mut rng);
            let direct = (a.clone().try_inverse().unwrap()
                + &b * c.clone().try_inverse().unwrap() * &d)
                .try_inverse()
                .unwrap();
            let e = woodbury(&a, &b, &c, &d).unwrap();
            assert!((e - direct).amax() < 1e-10);
        }
    }

    #[test]
    fn woodbury_singular_inner() {
        // D A B + C = 1 - 1 = 0
        let one = Matrix::from_element(1, 1, 1.0);
        let minus = Matrix::from_element(1, 1, -1.0);
        assert_eq!(woodbury(&one, &one, &minus, &one), Err(Error::SingularInner));
    }

    #[test]
    fn woodbury_dimension_checks() {
        let a = Matrix::identity(3, 3);
        let c = Matrix::identity(1, 1);
        let b = Matrix::zeros(2, 1);
        let d = Matrix::zeros(1, 3);
        assert!(matches!(
            woodbury(&a, &b, &c, &d),
            Err(Error::DimensionMismatch { .. })
        ));
        let nonsquare = Matrix::zeros(2, 3);
        assert!(matches!(
            woodbury(&nonsquare, &b, &c, &d),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn trace_and_symmetrize() {
        assert_eq!(trace(&Matrix::identity(3, 3)).unwrap(), 3.0);
        let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(trace(&d).unwrap(), 6.0);
        assert!(matches!(
            trace(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));

        let a = Matrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert_eq!(
            symmetrize(&a).unwrap(),
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        assert!(symmetrize(&Matrix::zeros(1, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random(5, 5, &mut rng);
        assert_relative_eq!(trace(&r).unwrap(), trace(&r.transpose()).unwrap());
        let s = symmetrize(&r).unwrap();
        assert_eq!(&s - s.transpose(), Matrix::zeros(5, 5));
        assert_eq!(symmetrize(&s).unwrap(), s);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-5.0f64..5.0, rows * cols)
                .prop_map(move |v| Matrix::from_vec(rows, cols, v))
        }

        proptest! {
            #[test]
            fn trace_of_symmetrized(a in matrix(4, 4)) {
                let t = trace(&a).unwrap();
                let ts = trace(&symmetrize(&a).unwrap()).unwrap();
                prop_assert!((t - ts).abs() <= 1e-12 * (1.0 + t.abs()));
            }

            #[test]
            fn penrose_conditions_full_row_rank(a in matrix(3, 6)) {
                let gram = &a * a.transpose();
                prop_assume!(symmetric_condition(&gram) < 1e8);
                let p = pinv_full_row_rank(&a).unwrap();
                let rel = |x: &Matrix, y: &Matrix| (x - y).norm() / y.norm().max(1e-300);
                prop_assert!(rel(&(&a * &p * &a), &a) < 1e-8);
                prop_assert!(rel(&(&p * &a * &p), &p) < 1e-8);
                let ap = &a * &p;
                prop_assert!(rel(&ap.transpose(), &ap) < 1e-8);
                let pa = &p * &a;
                prop_assert!(rel(&pa.transpose(), &pa) < 1e-8);
            }
        }
    }
}
