//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Condition number above which a solve is reported as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Cholesky factor of a symmetric positive-definite matrix, or `None` if the
/// matrix is not numerically positive definite.
pub(crate) fn spd_factor(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if a.nrows() != a.ncols() || a.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let sym = symmetrize(a);
    let chol = Cholesky::new(sym)?;
    // Cholesky accepts tiny positive pivots; reject the ones that are zero
    // up to rounding relative to the diagonal scale.
    let scale = a.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > scale * 1e-15) {
        return None;
    }
    Some(chol)
}

/// `(A + A') / 2`.
pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Spectral condition number of a symmetric matrix.
pub fn condition_number_sym(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let eig = symmetrize(a).symmetric_eigenvalues();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for e in eig.iter() {
        lo = lo.min(e.abs());
        hi = hi.max(e.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of an SPD matrix from its Cholesky factor.
pub(crate) fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    symmetrize(&chol.inverse())
}
