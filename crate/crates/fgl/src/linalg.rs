//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Returns `(eigenvalues, eigenvectors)` with eigenvectors
/// as columns, matching the eigenvalue order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = m[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Cholesky-based SPD inverse. Errors with the given context when the
/// factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))
}

/// Log-determinant of an SPD matrix via Cholesky.
pub fn spd_log_det(m: &DMatrix<f64>, context: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// True when the symmetric matrix admits a Cholesky factorization.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via its
/// eigen-decomposition. Eigenvalues below `rel_tol * max_eigenvalue` are
/// treated as zero.
pub fn symmetric_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_symmetric_eigen(m);
    let cutoff = rel_tol * values[0].abs().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        if values[k].abs() > cutoff {
            let v = vectors.column(k);
            let scale = 1.0 / values[k];
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += scale * v[i] * v[j];
                }
            }
        }
    }
    out
}

/// Spectral norm of a symmetric matrix: largest absolute eigenvalue.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sorted_symmetric_eigen(m);
    values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// l1/l1 operator norm: maximum absolute column sum.
pub fn l1_operator_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// Element-wise maximum absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Toeplitz matrix with entries `rho^|i-j|`.
pub fn toeplitz(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}
