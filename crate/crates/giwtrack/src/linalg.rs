//! Dense small-matrix helpers used by the recursions.
//!
//! Everything here operates on symmetric matrices of dimension 2 to 5; the
//! eigendecomposition-based routines trade a little speed for reproducible,
//! basis-independent results.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for accepting a matrix as positive definite.
///
/// A symmetric matrix passes if its smallest eigenvalue exceeds
/// `-SPD_TOLERANCE * largest eigenvalue`; recursion chains accumulate
/// round-off that makes an exact zero test useless.
pub const SPD_TOLERANCE: f64 = 1e-10;

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Eigenvalues of the symmetrized input, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetrize(m).symmetric_eigen().eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Positive definiteness within [`SPD_TOLERANCE`], after symmetrizing.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let ev = sym_eigenvalues(m);
    let largest = ev[ev.len() - 1];
    ev[0] > -SPD_TOLERANCE * largest.abs().max(1.0)
}

/// Validates that `m` is square of size `d`, finite, and positive definite;
/// returns the symmetrized copy.
pub fn checked_spd(m: &DMatrix<f64>, d: usize, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected {d}x{d}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_positive_definite(m) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    Ok(symmetrize(m))
}

/// Symmetric positive semidefinite square root, eigenvalues clamped at zero.
pub fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt * eig.eigenvectors.transpose()
}

/// Symmetric inverse square root.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&x| x <= 0.0) {
        return Err(Error::NotPositiveDefinite(
            "inverse square root of a non-PD matrix".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
    Ok(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose())
}

/// Inverse of a symmetric positive definite matrix, Cholesky first with an
/// LU fallback for nearly singular inputs.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = symmetrize(m).cholesky() {
        return Ok(chol.inverse());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// General square-matrix inverse.
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// `log |M|` for symmetric positive definite `M`.
pub fn spd_log_det(m: &DMatrix<f64>) -> Result<f64> {
    match symmetrize(m).cholesky() {
        Some(chol) => Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>()),
        None => {
            // Marginally conditioned inputs can fail Cholesky while still
            // having positive eigenvalues.
            let ev = sym_eigenvalues(m);
            if ev[0] <= 0.0 {
                return Err(Error::NotPositiveDefinite("log-determinant".into()));
            }
            Ok(ev.iter().map(|x| x.ln()).sum())
        }
    }
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
