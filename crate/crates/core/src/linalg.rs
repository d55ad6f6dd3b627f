//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative Frobenius asymmetry `‖M − Mᵀ‖ / ‖M‖`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// Checks that `m` is square, symmetric within `1e-12` and PSD within
/// `−1e-12·‖m‖`.
pub fn check_covariance(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::arg(format!("{what} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(format!("{what} has non-finite entries")));
    }
    if asymmetry(m) > 1e-12 {
        return Err(Error::arg(format!("{what} is not symmetric")));
    }
    let min_eig = symmetric_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min);
    if m.nrows() > 0 && min_eig < -1e-12 * m.norm() {
        return Err(Error::arg(format!(
            "{what} is not positive semidefinite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect()
}

/// Eigenvalues clamped at zero when the negative part is rounding noise
/// (above `−1e-10·‖m‖`); anything more negative is an error.
fn clamped_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, Dyn>> {
    let mut eig = SymmetricEigen::new(symmetrize(m));
    let floor = -1e-10 * m.norm().max(f64::MIN_POSITIVE);
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::arg(format!(
                    "matrix is indefinite (eigenvalue {v:e})"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clamped_eigen(m)?;
    let mut vecs = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.sqrt();
        vecs.column_mut(j).scale_mut(s);
    }
    Ok(symmetrize(&(vecs * eig.eigenvectors.transpose())))
}

/// `Tr(m^{1/2})` for symmetric PSD `m`.
pub fn trace_sqrt_psd(m: &DMatrix<f64>) -> Result<f64> {
    Ok(clamped_eigen(m)?.eigenvalues.iter().map(|v| v.sqrt()).sum())
}

/// Cholesky factorization; retried once with jitter `1e-12·tr(m)/n` on failure.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(symmetrize(m)) {
        return Ok(c);
    }
    let n = m.nrows().max(1) as f64;
    let jitter = 1e-12 * m.trace() / n;
    if jitter > 0.0 {
        let mut shifted = symmetrize(m);
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c);
        }
    }
    Err(Error::arg("matrix is not positive definite"))
}

pub fn cholesky_strict(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::arg(format!("{what} is not positive definite")))
}

/// `log det` from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let s = sqrt_psd(&m).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((s[(1, 1)] - 3.0).abs() < 1e-14);
        assert!(s[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn sqrt_clamps_rounding_negatives_only() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-15]);
        assert!(sqrt_psd(&m).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(sqrt_psd(&bad).is_err());
    }

    #[test]
    fn covariance_checks() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(check_covariance(&asym, "c").is_err());
        assert!(check_covariance(&DMatrix::identity(3, 3), "c").is_ok());
    }
}
