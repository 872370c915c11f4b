//! Dense helpers on top of nalgebra: Cholesky with named failures, spectra,
//! and Hermitian extremal eigenvalues.

use nalgebra::{Cholesky, Complex, DMatrix, Schur, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// No pivoting or regularization: an indefinite input is reported as
/// [`Error::NotPositiveDefinite`] with `block` as the name.
pub fn cholesky<T: Real>(m: &DMatrix<T>, block: &str) -> Result<DMatrix<T>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{block} must be square")));
    }
    if m.iter().any(|v| !v.is_finite_val()) {
        return Err(Error::NotPositiveDefinite { block: block.to_string() });
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    Cholesky::new(sym)
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite { block: block.to_string() })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    let mut ev: Vec<T> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty matrix).
pub fn min_sym_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::infinity)
}

/// Smallest eigenvalue of the Hermitian matrix `re + i*im`.
///
/// Uses the real embedding `[[re, -im], [im, re]]`, whose spectrum is that of
/// the Hermitian matrix with every eigenvalue doubled.
pub fn min_hermitian_eigenvalue<T: Real>(re: &DMatrix<T>, im: &DMatrix<T>) -> T {
    let m = re.nrows();
    let mut big = DMatrix::zeros(2 * m, 2 * m);
    big.view_mut((0, 0), (m, m)).copy_from(re);
    big.view_mut((m, m), (m, m)).copy_from(re);
    big.view_mut((0, m), (m, m)).copy_from(&(-im));
    big.view_mut((m, 0), (m, m)).copy_from(im);
    min_sym_eigenvalue(&big)
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues<T: Real>(a: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("eigenvalues of a non-square matrix".into()));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite_val()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(a.clone(), T::eps(), 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Sorts a spectrum by modulus, largest first (ties broken by real part).
pub fn sort_by_modulus_desc<T: Real>(ev: &mut [Complex<T>]) {
    ev.sort_by(|a, b| {
        let (ma, mb) = (a.re.hypot(a.im), b.re.hypot(b.im));
        mb.partial_cmp(&ma)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal))
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Block-diagonal assembly of square blocks.
pub fn block_diag<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

/// Spectral norm.
pub fn norm2<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().svd(false, false).singular_values.max()
}
