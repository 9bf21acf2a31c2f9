//! Rank- and sign-based covariance estimators for elliptical returns:
//! pairwise rank correlations with the sine map, the spatial sign scatter
//! for eigenvectors, and Huber-loss second-moment scales.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sorted_symmetric_eigen, symmetrize};
use crate::panel::ReturnsPanel;

/// Robust covariance pieces for the elliptical pipeline.
#[derive(Debug, Clone)]
pub struct RobustCovariance {
    /// `D R1 D` with rank-based correlations: source of the spectrum.
    pub sigma_el1: DMatrix<f64>,
    /// `D R2 D` with the spatial sign scatter: source of the eigenvectors.
    pub sigma_el2: DMatrix<f64>,
    /// Huber-based standard-deviation scales.
    pub d_hat: DVector<f64>,
    /// Top-K eigenvalues of `sigma_el1`.
    pub lambdas_k: DVector<f64>,
    /// Top-K unit eigenvectors of `sigma_el2` (columns).
    pub gammas_k: DMatrix<f64>,
}

/// Default Huber truncation multiplier.
pub const HUBER_C: f64 = 2.0;

/// Kendall rank correlation (tau-b) of two equal-length series, computed by
/// the merge-sort inversion count. Pairs fully tied in either coordinate are
/// removed from the normalization; a constant series yields 0.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    debug_assert_eq!(n, y.len());
    if n < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then(y[a].partial_cmp(&y[b]).unwrap())
    });

    let n0 = n as f64 * (n as f64 - 1.0) / 2.0;
    // ties in x, and joint ties in (x, y)
    let mut ties_x = 0.0f64;
    let mut ties_xy = 0.0f64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && x[idx[j]] == x[idx[i]] {
                j += 1;
            }
            let run = (j - i) as f64;
            ties_x += run * (run - 1.0) / 2.0;
            let mut a = i;
            while a < j {
                let mut b = a + 1;
                while b < j && y[idx[b]] == y[idx[a]] {
                    b += 1;
                }
                let r = (b - a) as f64;
                ties_xy += r * (r - 1.0) / 2.0;
                a = b;
            }
            i = j;
        }
    }
    // inversions of y in x-order = discordant pairs
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0f64; n];
    let discordant = merge_count(&mut ys, &mut buf, 0, n) as f64;
    // ties in y overall
    let mut y_sorted: Vec<f64> = y.to_vec();
    y_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ties_y = 0.0f64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && y_sorted[j] == y_sorted[i] {
                j += 1;
            }
            let run = (j - i) as f64;
            ties_y += run * (run - 1.0) / 2.0;
            i = j;
        }
    }
    let num = n0 - ties_x - ties_y + ties_xy - 2.0 * discordant;
    let denom = ((n0 - ties_x) * (n0 - ties_y)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    num / denom
}

/// Merge sort counting strict inversions in `v[lo..hi)`.
fn merge_count(v: &mut [f64], buf: &mut [f64], lo: usize, hi: usize) -> u64 {
    if hi - lo < 2 {
        return 0;
    }
    let mid = (lo + hi) / 2;
    let mut count = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    let (mut i, mut j, mut k) = (lo, mid, lo);
    while i < mid && j < hi {
        if v[j] < v[i] {
            count += (mid - i) as u64;
            buf[k] = v[j];
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < hi {
        buf[k] = v[j];
        j += 1;
        k += 1;
    }
    v[lo..hi].copy_from_slice(&buf[lo..hi]);
    count
}

/// Pairwise rank-correlation matrix mapped through `sin(pi tau / 2)`,
/// the elliptical-family relation between Kendall's tau and linear
/// correlation. Diagonal is 1.
pub fn kendall_tau_correlation(panel: &ReturnsPanel) -> DMatrix<f64> {
    let p = panel.num_assets();
    let values = panel.values();
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|i| values.row(i).iter().copied().collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .collect();
    let entries: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let tau = kendall_tau(&rows[i], &rows[j]);
            ((i, j), (std::f64::consts::FRAC_PI_2 * tau).sin())
        })
        .collect();
    let mut r = DMatrix::identity(p, p);
    for ((i, j), v) in entries {
        r[(i, j)] = v;
        r[(j, i)] = v;
    }
    r
}

/// Spatial sign scatter of standardized observations:
/// the average of `(z_s - z_t)(z_s - z_t)' / ||z_s - z_t||^2` over pairs
/// `s < t`, skipping duplicate observations. Returns the matrix and the
/// number of skipped pairs.
pub fn spatial_kendall_matrix(
    panel: &ReturnsPanel,
    d_hat: &DVector<f64>,
) -> Result<(DMatrix<f64>, usize)> {
    let p = panel.num_assets();
    let t = panel.num_periods();
    if d_hat.len() != p {
        return Err(Error::InvalidArgument(
            "scale vector length must match the asset count".into(),
        ));
    }
    for (i, d) in d_hat.iter().enumerate() {
        if *d <= 0.0 || !d.is_finite() {
            return Err(Error::DegenerateRobustScale { asset: i });
        }
    }
    let values = panel.values();
    let mut z = DMatrix::zeros(p, t);
    for j in 0..t {
        for i in 0..p {
            z[(i, j)] = values[(i, j)] / d_hat[i];
        }
    }
    let mut m = DMatrix::zeros(p, p);
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut diff = vec![0.0f64; p];
    for s in 0..t {
        for u in (s + 1)..t {
            let mut norm_sq = 0.0;
            for i in 0..p {
                let d = z[(i, s)] - z[(i, u)];
                diff[i] = d;
                norm_sq += d * d;
            }
            if norm_sq == 0.0 {
                skipped += 1;
                continue;
            }
            used += 1;
            let inv = 1.0 / norm_sq;
            for a in 0..p {
                let da = diff[a] * inv;
                for b in a..p {
                    m[(a, b)] += da * diff[b];
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument(
            "all observation pairs are duplicates".into(),
        ));
    }
    let scale = 1.0 / used as f64;
    for a in 0..p {
        for b in a..p {
            let v = m[(a, b)] * scale;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok((m, skipped))
}

/// Top-`k` unit eigenvectors of `D R2 D`, where `R2` is the spatial sign
/// scatter of the standardized panel. Sign convention: the entry with the
/// largest modulus in each eigenvector is positive.
pub fn spatial_kendall_eigvecs(
    panel: &ReturnsPanel,
    k: usize,
    d_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let p = panel.num_assets();
    if k < 1 || k > p {
        return Err(Error::InvalidArgument(format!(
            "k={k} out of range 1..={p}"
        )));
    }
    let (r2, _) = spatial_kendall_matrix(panel, d_hat)?;
    let sigma_el2 = scale_by_diag(&r2, d_hat);
    let (_, vectors) = sorted_symmetric_eigen(&sigma_el2);
    let mut out = DMatrix::zeros(p, k);
    for r in 0..k {
        let col = vectors.column(r);
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        let flip = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            out[(i, r)] = flip * col[i];
        }
    }
    Ok(out)
}

fn scale_by_diag(r: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let p = r.nrows();
    DMatrix::from_fn(p, p, |i, j| d[i] * r[(i, j)] * d[j])
}

/// Zero out negative eigenvalues of a symmetric matrix.
fn clip_to_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_symmetric_eigen(m);
    if vals[vals.len() - 1] >= 0.0 {
        return m.clone();
    }
    let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0)));
    symmetrize(&(&vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose()))
}

/// Huber M-estimate of the second moment of a series.
///
/// Minimizes `sum_t huber_tau(x_t^2 - theta)` with truncation
/// `tau = c * mad(x^2) * sqrt(T / ln T)`, solved by bisection on the
/// monotone score. A zero-spread series returns the common value of `x^2`
/// (0 for the all-zero series).
pub fn huber_scale(series: &[f64], c: f64) -> f64 {
    let n = series.len();
    assert!(n >= 2, "huber_scale needs at least two observations");
    let squares: Vec<f64> = series.iter().map(|x| x * x).collect();
    let med = median(&squares);
    let deviations: Vec<f64> = squares.iter().map(|s| (s - med).abs()).collect();
    let mad = 1.4826 * median(&deviations);
    let tau = c * mad * (n as f64 / (n as f64).ln()).sqrt();
    if tau <= 0.0 || !tau.is_finite() {
        return med;
    }
    let score = |theta: f64| -> f64 {
        squares
            .iter()
            .map(|s| (s - theta).clamp(-tau, tau))
            .sum::<f64>()
    };
    let mut lo = squares.iter().cloned().fold(f64::INFINITY, f64::min) - tau;
    let mut hi = squares.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + tau;
    // score(lo) >= 0 >= score(hi); bisect to 1e-10 absolute width
    for _ in 0..200 {
        if hi - lo <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn median(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Assemble the robust covariance pieces for `k` factors: Huber scales,
/// sine-mapped rank correlations for the spectrum, and the sign scatter for
/// the eigenvectors. Series are centered at their sample means before the
/// scale estimation.
pub fn robust_covariance(panel: &ReturnsPanel, k: usize) -> Result<RobustCovariance> {
    let p = panel.num_assets();
    if k < 1 || k > p {
        return Err(Error::InvalidArgument(format!(
            "k={k} out of range 1..={p}"
        )));
    }
    let (centered, _) = panel.demeaned();
    let mut d_hat = DVector::zeros(p);
    for i in 0..p {
        let row: Vec<f64> = centered.row(i).iter().copied().collect();
        let second_moment = huber_scale(&row, HUBER_C);
        if second_moment <= 0.0 {
            return Err(Error::DegenerateRobustScale { asset: i });
        }
        d_hat[i] = second_moment.sqrt();
    }
    // The entrywise sine map leaves the rank-correlation matrix slightly
    // indefinite in finite samples; the Huber scales amplify its negative
    // tail beyond what the penalized stage's +lambda*I shift can absorb.
    // Clip the spectrum at zero before assembling the covariance.
    let r1 = clip_to_psd(&kendall_tau_correlation(panel));
    let sigma_el1 = symmetrize(&scale_by_diag(&r1, &d_hat));
    let centered_panel = ReturnsPanel::new(
        centered,
        panel.period_labels().to_vec(),
        panel.asset_labels().to_vec(),
    )?;
    let (r2, _) = spatial_kendall_matrix(&centered_panel, &d_hat)?;
    let sigma_el2 = symmetrize(&scale_by_diag(&r2, &d_hat));
    let subspace = spatial_kendall_eigvecs(&centered_panel, k, &d_hat)?;
    // Eigen-structure of sigma_el1 restricted to the sign-scatter subspace:
    // the K x K compression is diagonalized so the reported eigenvectors
    // still span the EL2-estimated subspace while the eigenvalues come from
    // sigma_el1. Near-tied spikes rotate freely inside the subspace, so
    // pairing raw eigenvalues of one matrix with eigenvectors of the other
    // would overshoot the low-rank subtraction by spike-sized amounts.
    let compressed = subspace.transpose() * &sigma_el1 * &subspace;
    let (comp_vals, comp_vecs) = sorted_symmetric_eigen(&symmetrize(&compressed));
    let mut gammas_k = &subspace * comp_vecs;
    for r in 0..k {
        let col = gammas_k.column(r);
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if gammas_k[(best, r)] < 0.0 {
            for i in 0..p {
                gammas_k[(i, r)] = -gammas_k[(i, r)];
            }
        }
    }
    let lambdas_k = comp_vals;
    Ok(RobustCovariance {
        sigma_el1,
        sigma_el2,
        d_hat,
        lambdas_k,
        gammas_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{ChiSquared, Distribution, StandardNormal};

    #[test]
    fn tau_perfectly_concordant() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((kendall_tau(&x, &y) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_perfectly_discordant() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((kendall_tau(&x, &y) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_constant_series_is_zero() {
        let x = vec![1.0; 20];
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(kendall_tau(&x, &y), 0.0);
    }

    #[test]
    fn tau_matches_naive_count() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = 30;
            let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let fast = kendall_tau(&x, &y);
            let mut conc = 0i64;
            let mut disc = 0i64;
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = (x[i] - x[j]) * (y[i] - y[j]);
                    if s > 0.0 {
                        conc += 1;
                    } else if s < 0.0 {
                        disc += 1;
                    }
                }
            }
            let naive = (conc - disc) as f64 / (n as f64 * (n as f64 - 1.0) / 2.0);
            assert!((fast - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_map_recovers_gaussian_correlation() {
        // Bivariate Gaussian with correlation 0.5; Greiner's relation.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let t = 5000;
        let rho: f64 = 0.5;
        let mut values = DMatrix::zeros(2, t);
        for j in 0..t {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            values[(0, j)] = z1;
            values[(1, j)] = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
        }
        let panel = ReturnsPanel::from_values(values).unwrap();
        let r = kendall_tau_correlation(&panel);
        assert!((r[(0, 1)] - 0.5).abs() < 0.05, "got {}", r[(0, 1)]);
        assert_eq!(r[(0, 0)], 1.0);
    }

    #[test]
    fn spatial_matrix_isotropic_eigenvalues() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let p = 4;
        let t = 5000;
        let values = DMatrix::from_fn(p, t, |_, _| StandardNormal.sample(&mut rng));
        let panel = ReturnsPanel::from_values(values).unwrap();
        let ones = DVector::from_element(p, 1.0);
        let (m, skipped) = spatial_kendall_matrix(&panel, &ones).unwrap();
        assert_eq!(skipped, 0);
        let (vals, _) = sorted_symmetric_eigen(&m);
        for v in vals.iter() {
            assert!((v - 0.25).abs() < 0.05, "eigenvalue {v}");
        }
    }

    #[test]
    fn spatial_axis_aligned_top_eigenvector() {
        let mut values = DMatrix::zeros(2, 40);
        for j in 0..40 {
            values[(0, j)] = (j as f64) - 20.0;
            values[(1, j)] = 0.0;
        }
        let panel = ReturnsPanel::from_values(values).unwrap();
        let ones = DVector::from_element(2, 1.0);
        let vecs = spatial_kendall_eigvecs(&panel, 1, &ones).unwrap();
        assert!((vecs[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(vecs[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn spatial_recovers_elliptical_eigenvector() {
        // t(4.2) sample with a planted dominant direction.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let p = 4;
        let t = 5000;
        let nu = 4.2;
        // covariance with leading eigenvector along (1,1,1,1)/2
        let lead = DVector::from_element(p, 0.5);
        let mut sigma = DMatrix::identity(p, p) * 0.3;
        for i in 0..p {
            for j in 0..p {
                sigma[(i, j)] += 6.0 * lead[i] * lead[j];
            }
        }
        let scale = &sigma * ((nu - 2.0) / nu);
        let chol = scale.cholesky().unwrap();
        let chi = ChiSquared::new(nu).unwrap();
        let mut values = DMatrix::zeros(p, t);
        for j in 0..t {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let x = chol.l() * z;
            let w: f64 = chi.sample(&mut rng);
            let mult = (nu / w).sqrt();
            for i in 0..p {
                values[(i, j)] = x[i] * mult;
            }
        }
        let panel = ReturnsPanel::from_values(values).unwrap();
        let ones = DVector::from_element(p, 1.0);
        let vecs = spatial_kendall_eigvecs(&panel, 1, &ones).unwrap();
        let cos_angle = vecs.column(0).dot(&lead).abs();
        let angle_deg = cos_angle.min(1.0).acos().to_degrees();
        assert!(angle_deg <= 5.0, "angle {angle_deg} degrees");
    }

    #[test]
    fn huber_constant_zero_series() {
        assert_eq!(huber_scale(&[0.0; 10], HUBER_C), 0.0);
    }

    #[test]
    fn huber_gaussian_second_moment() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let series: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                2.0 * z
            })
            .collect();
        let est = huber_scale(&series, HUBER_C);
        assert!((est - 4.0).abs() < 0.1, "got {est}");
    }

    #[test]
    fn huber_resists_extreme_outlier() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut series: Vec<f64> = (0..999).map(|_| StandardNormal.sample(&mut rng)).collect();
        series.push(1e6);
        let est = huber_scale(&series, HUBER_C);
        assert!((est - 1.0).abs() < 0.2, "robust estimate {est}");
        // the plain sample second moment explodes
        let naive: f64 = series.iter().map(|x| x * x).sum::<f64>() / series.len() as f64;
        assert!(naive > 1e8);
    }

    #[test]
    fn robust_covariance_positive_scales() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let values = DMatrix::from_fn(5, 200, |_, _| StandardNormal.sample(&mut rng));
        let panel = ReturnsPanel::from_values(values).unwrap();
        let rc = robust_covariance(&panel, 2).unwrap();
        for d in rc.d_hat.iter() {
            assert!(*d > 0.0);
        }
        for r in 0..2 {
            let norm = rc.gammas_k.column(r).norm();
            assert!((norm - 1.0).abs() < 1e-10);
        }
        assert_eq!(rc.sigma_el1, symmetrize(&rc.sigma_el1));
    }
}
