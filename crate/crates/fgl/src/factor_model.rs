//! Approximate factor model estimation by principal components.
//!
//! Returns are de-meaned per asset before extraction; the retained means feed
//! portfolio construction downstream. Factors are normalized so that
//! `(1/T) F F' = I` and the loading Gram matrix is diagonal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;
use crate::panel::ReturnsPanel;

/// Estimated factor structure of a returns panel.
#[derive(Debug, Clone)]
pub struct FactorModelFit {
    /// Number of factors used.
    pub k_hat: usize,
    /// `K x T` factor series.
    pub factors: DMatrix<f64>,
    /// `p x K` loadings.
    pub loadings: DMatrix<f64>,
    /// `p x T` residuals of the de-meaned returns.
    pub residuals: DMatrix<f64>,
    /// `(1/T) E E'` residual covariance.
    pub sigma_eps: DMatrix<f64>,
    /// `(1/T) F F'` factor covariance.
    pub sigma_f: DMatrix<f64>,
    /// Inverse of `sigma_f`.
    pub theta_f: DMatrix<f64>,
    /// Per-asset sample means removed before extraction.
    pub asset_means: DVector<f64>,
}

/// Relative cutoff below which an eigenvalue counts as numerically zero.
const RANK_TOL: f64 = 1e-12;

/// Principal-components fit with a fixed number of factors.
///
/// Factors are `sqrt(T)` times the leading unit eigenvectors of `R'R`
/// (rows of the factor matrix), loadings are `R F' / T`. The eigen problem is
/// solved on the smaller of `R'R` (`T x T`) and `R R'` (`p x p`).
pub fn estimate_pca(panel: &ReturnsPanel, k: usize) -> Result<FactorModelFit> {
    let p = panel.num_assets();
    let t = panel.num_periods();
    if k < 1 || k > p.min(t) {
        return Err(Error::InvalidArgument(format!(
            "k={k} out of range 1..={}",
            p.min(t)
        )));
    }
    let (centered, means) = panel.demeaned();
    let (factors, _) = pca_factors(&centered, k)?;
    finish_fit(&centered, factors, means)
}

/// Extract `sqrt(T) * eig_k(R'R)` factors from a centered `p x T` matrix.
/// Also returns the top-k eigenvalues of `R'R`.
fn pca_factors(centered: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let p = centered.nrows();
    let t = centered.ncols();
    let sqrt_t = (t as f64).sqrt();
    if t <= p {
        // Eigenvectors of R'R are the factor directions themselves.
        let gram = centered.transpose() * centered;
        let (values, vectors) = sorted_symmetric_eigen(&gram);
        check_rank(&values, k)?;
        let mut factors = DMatrix::zeros(k, t);
        for r in 0..k {
            for j in 0..t {
                factors[(r, j)] = sqrt_t * vectors[(j, r)];
            }
        }
        Ok((factors, values.iter().take(k).copied().collect()))
    } else {
        // Decompose the smaller R R' and map u -> v = R'u / sqrt(lambda).
        let gram = centered * centered.transpose();
        let (values, vectors) = sorted_symmetric_eigen(&gram);
        check_rank(&values, k)?;
        let mut factors = DMatrix::zeros(k, t);
        for r in 0..k {
            let u = vectors.column(r);
            let v = centered.transpose() * u;
            let scale = sqrt_t / values[r].sqrt();
            for j in 0..t {
                factors[(r, j)] = scale * v[j];
            }
        }
        Ok((factors, values.iter().take(k).copied().collect()))
    }
}

fn check_rank(values: &DVector<f64>, k: usize) -> Result<()> {
    let top = values[0].max(f64::MIN_POSITIVE);
    for i in 0..k {
        if values[i] <= RANK_TOL * top {
            return Err(Error::InsufficientRank { index: i });
        }
    }
    Ok(())
}

/// Loadings, residuals and covariances for given factors; applies the sign
/// convention making each factor's largest-magnitude loading positive.
fn finish_fit(
    centered: &DMatrix<f64>,
    mut factors: DMatrix<f64>,
    means: DVector<f64>,
) -> Result<FactorModelFit> {
    let t = centered.ncols() as f64;
    let k = factors.nrows();
    let mut loadings = centered * factors.transpose() / t;
    for r in 0..k {
        let col = loadings.column(r);
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if loadings[(best, r)] < 0.0 {
            for i in 0..loadings.nrows() {
                loadings[(i, r)] = -loadings[(i, r)];
            }
            for j in 0..factors.ncols() {
                factors[(r, j)] = -factors[(r, j)];
            }
        }
    }
    let residuals = centered - &loadings * &factors;
    let sigma_eps = &residuals * residuals.transpose() / t;
    let sigma_f = &factors * factors.transpose() / t;
    let theta_f = sigma_f
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::CollinearFactors)?;
    Ok(FactorModelFit {
        k_hat: k,
        factors,
        loadings,
        residuals,
        sigma_eps,
        sigma_f,
        theta_f,
        asset_means: means,
    })
}

/// Default information-criterion penalty `g(p,T)`.
pub fn default_penalty(p: usize, t: usize) -> f64 {
    let (p, t) = (p as f64, t as f64);
    (p + t) / (p * t) * (p * t / (p + t)).ln()
}

/// Default cap on the number of candidate factors:
/// `floor(min(p^(1/3), T) - 1)` clamped to `[1, 15]`.
pub fn default_k_max(p: usize, t: usize) -> usize {
    let bound = (p as f64).cbrt().min(t as f64) - 1.0;
    (bound.floor() as usize).clamp(1, 15)
}

/// Data-driven selection of the number of factors.
///
/// Minimizes `ln V(K) + K g(p,T)` over `1 <= K <= k_max`, where `V(K)` is the
/// scaled least-squares objective under the normalization `B'B / p = I_K`,
/// evaluated at the rescaled factor estimate. Ties break toward smaller `K`.
pub fn select_num_factors<F>(panel: &ReturnsPanel, k_max: usize, penalty: F) -> Result<usize>
where
    F: Fn(usize, usize) -> f64,
{
    let p = panel.num_assets();
    let t = panel.num_periods();
    if k_max < 1 || k_max > p.min(t) {
        return Err(Error::InvalidArgument(format!(
            "k_max={k_max} out of range 1..={}",
            p.min(t)
        )));
    }
    let (centered, _) = panel.demeaned();
    // Loadings under B'B/p = I are sqrt(p) times eigenvectors of R R'.
    let gram = if p <= t {
        &centered * centered.transpose()
    } else {
        // Same nonzero spectrum; eigenvectors mapped back below.
        centered.transpose() * &centered
    };
    let (values, vectors) = sorted_symmetric_eigen(&gram);
    let g = penalty(p, t);
    let tf = t as f64;
    let pf = p as f64;

    let mut best_k = 1usize;
    let mut best_crit = f64::INFINITY;
    for k in 1..=k_max {
        let kf = k as f64;
        // B = sqrt(p) * U_k, F_bar = sqrt(K)/p * B' R = sqrt(K/p) U_k' R.
        let u_k: DMatrix<f64> = if p <= t {
            vectors.columns(0, k).into_owned()
        } else {
            // u = R v / sqrt(lambda) maps T-side eigenvectors to the p side.
            let mut u = DMatrix::zeros(p, k);
            for r in 0..k {
                if values[r] <= RANK_TOL * values[0].max(f64::MIN_POSITIVE) {
                    return Err(Error::InsufficientRank { index: r });
                }
                let col = (&centered * vectors.column(r)) / values[r].sqrt();
                u.set_column(r, &col);
            }
            u
        };
        let f_bar = (kf / pf).sqrt() * (u_k.transpose() * &centered);
        // Rescaled factors: F_hat = (F_bar F_bar'/T)^(1/2) F_bar.
        let m = &f_bar * f_bar.transpose() / tf;
        let (m_vals, m_vecs) = sorted_symmetric_eigen(&m);
        let mut sqrt_m = DMatrix::zeros(k, k);
        for r in 0..k {
            let lam = m_vals[r].max(0.0).sqrt();
            for i in 0..k {
                for j in 0..k {
                    sqrt_m[(i, j)] += lam * m_vecs[(i, r)] * m_vecs[(j, r)];
                }
            }
        }
        let f_hat = &sqrt_m * &f_bar;
        // V(K, F_hat): least squares of R on F_hat with the 1/sqrt(K) scaling.
        let ff = &f_hat * f_hat.transpose();
        let chol = match ff.cholesky() {
            Some(c) => c,
            None => continue, // rank-deficient candidate; skip
        };
        let lam = {
            let rf = &centered * f_hat.transpose();
            let solved = chol.solve(&rf.transpose());
            kf.sqrt() * solved.transpose()
        };
        let resid = &centered - (&lam * &f_hat) / kf.sqrt();
        let v = resid.iter().map(|x| x * x).sum::<f64>() / (pf * tf);
        let crit = v.max(f64::MIN_POSITIVE).ln() + kf * g;
        if crit < best_crit {
            best_crit = crit;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Least-squares fit on externally supplied factors.
///
/// Each asset is regressed on the observed factor series; identification
/// constraints are not enforced in this mode. When `demean_factors` is set,
/// the factor series are centered before the regression, matching the
/// treatment of the returns.
pub fn fit_observed_factors(
    panel: &ReturnsPanel,
    observed: &DMatrix<f64>,
    demean_factors: bool,
) -> Result<FactorModelFit> {
    let t = panel.num_periods();
    let k = observed.nrows();
    if observed.ncols() != t {
        return Err(Error::InvalidArgument(format!(
            "observed factors have {} periods, panel has {t}",
            observed.ncols()
        )));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("need at least one factor".into()));
    }
    let (centered, means) = panel.demeaned();
    let mut factors = observed.clone();
    if demean_factors {
        for r in 0..k {
            let mean = factors.row(r).sum() / t as f64;
            for j in 0..t {
                factors[(r, j)] -= mean;
            }
        }
    }
    let tf = t as f64;
    let ff = &factors * factors.transpose();
    let chol = ff.cholesky().ok_or(Error::CollinearFactors)?;
    // Normal equations per asset: B' = (F F')^{-1} F R'.
    let loadings = chol.solve(&(&factors * centered.transpose())).transpose();
    let residuals = &centered - &loadings * &factors;
    let sigma_eps = &residuals * residuals.transpose() / tf;
    let sigma_f = &factors * factors.transpose() / tf;
    let theta_f = sigma_f
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::CollinearFactors)?;
    Ok(FactorModelFit {
        k_hat: k,
        factors,
        loadings,
        residuals,
        sigma_eps,
        sigma_f,
        theta_f,
        asset_means: means,
    })
}
