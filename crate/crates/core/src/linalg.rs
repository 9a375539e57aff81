//! Small dense helpers shared by the design and simulation code.

use nalgebra::{DMatrix, SymmetricEigen};

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.max()
}

/// Tolerance used for PSD-order comparisons: `1e-8 · (1 + ‖m‖_F)`.
pub fn psd_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + m.norm())
}

/// `a ⪯ b` in the PSD order, up to [`psd_tolerance`].
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let d = b - a;
    min_eigenvalue(&d) >= -psd_tolerance(&d)
}

/// Whether `m` is symmetric within `1e-10` and PSD within `-1e-10·‖m‖`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.norm();
    let asym = (m - m.transpose()).amax();
    asym <= 1e-10 * (1.0 + scale) && min_eigenvalue(m) >= -1e-10 * scale.max(1e-300)
}

/// Generalized inverse of a symmetric PSD matrix: Cholesky when it succeeds,
/// otherwise the SVD pseudo-inverse (minimum-norm solution).
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.inverse());
    }
    let eps = 1e-13 * m.amax().max(f64::MIN_POSITIVE);
    m.clone().pseudo_inverse(eps).ok()
}

/// Largest absolute eigenvalue of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Build a matrix from nested row vectors. Returns `None` for ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row-major nested vectors, the inverse of [`from_rows`].
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_order_detects_violation() {
        let a = DMatrix::from_diagonal_element(2, 2, 1.0);
        let b = DMatrix::from_diagonal_element(2, 2, 2.0);
        assert!(psd_leq(&a, &b));
        assert!(!psd_leq(&b, &a));
    }

    #[test]
    fn pseudo_inverse_fallback_is_min_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let inv = spd_inverse(&m).unwrap();
        assert!((inv[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(inv[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn rotation_spectral_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[0.73, -0.42, 0.42, 0.73]);
        assert!((spectral_radius(&m) - 0.8422).abs() < 1e-4);
    }
}
