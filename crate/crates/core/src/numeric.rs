//! Shared numeric helpers and tolerances.

use nalgebra::DMatrix;

/// Infinity norm (maximum absolute row sum) of a matrix.
pub(crate) fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Magnitude below which an eigenvalue of `a` counts as zero.
pub(crate) fn zero_eig_tol(a: &DMatrix<f64>) -> f64 {
    1e-9 * inf_norm(a).max(1.0)
}
