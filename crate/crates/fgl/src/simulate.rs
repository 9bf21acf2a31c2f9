//! Synthetic data-generating processes and Monte Carlo experiment drivers:
//! convergence-rate measurement, estimator comparison, elliptical-tail
//! robustness, and pervasiveness sensitivity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::sample_inverse_estimate;
use crate::error::{Error, Result};
use crate::glasso::{graph_stats, select_lambda, GlassoConfig, PrecisionEstimate};
use crate::linalg::{l1_operator_norm, symmetric_spectral_norm, symmetrize, toeplitz};
use crate::panel::ReturnsPanel;
use crate::pipeline::{
    fgl_combine, fgl_estimate, robust_fgl_estimate, FactorMode, FglOptions, Robust,
};
use crate::portfolio::{
    exposure_scalars, gmv_weights, mrc_weights, mwc_weights, risk_exposure, Formulation,
    MomentInputs,
};

/// Which synthetic process generates the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgpKind {
    /// Random-graph idiosyncratic precision, AR(1) Gaussian factors.
    RandomGraphFactor,
    /// Jointly multivariate-t factors and residuals, Toeplitz residual
    /// covariance, Gaussian loadings.
    EllipticalT,
    /// AR(1) Gaussian factors with Toeplitz residual covariance and K = 3;
    /// the Toeplitz parameter controls the systematic-idiosyncratic gap.
    Pervasiveness,
}

/// Full description of a synthetic experiment configuration.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub t: usize,
    pub p: usize,
    pub k: usize,
    /// Edge probability of the random precision graph.
    pub q: f64,
    /// Diagonal boost of the planted precision.
    pub u: f64,
    /// Off-diagonal magnitude of the planted precision.
    pub v: f64,
    /// Toeplitz parameter of the loading construction.
    pub rho_loadings: f64,
    /// Toeplitz parameter of the residual covariance (elliptical and
    /// pervasiveness kinds).
    pub rho_eps: f64,
    /// Factor AR(1) coefficient.
    pub phi_f: f64,
    /// Factor innovation variance.
    pub sigma_zeta2: f64,
    /// Degrees of freedom of the t draw; `f64::INFINITY` means Gaussian.
    pub nu: f64,
    /// Scale the Toeplitz loadings by `sqrt(p)` so the loading Gram matrix
    /// grows at rate `p`, keeping the factor eigenvalues spiked.
    pub pervasive_loadings: bool,
    /// Explicit loading scale overriding `pervasive_loadings`. Used by the
    /// pervasiveness experiment, which calibrates the factor strength to a
    /// target eigenvalue gap instead of keeping the spikes at rate `p`.
    pub loading_scale: Option<f64>,
    /// Rotate the scaled loadings off the coordinate axes. The pervasiveness
    /// study keeps the literal axis-aligned construction: entangling weak
    /// factors with the idiosyncratic variance of the loaded assets is the
    /// stress it measures.
    pub rotate_loadings: bool,
    /// Risk budget used for the true risk-constrained weights.
    pub sigma_target: f64,
}

/// `T = round(2^h)`.
pub fn sample_size_for(h: f64) -> usize {
    2f64.powf(h).round() as usize
}

/// `K = floor(2 (ln T)^(1/2))`, at least 1.
pub fn factor_count_for(t: usize) -> usize {
    ((2.0 * (t as f64).ln().sqrt()).floor() as usize).max(1)
}

/// `q = 1 / (p T^(4/5))`.
pub fn edge_probability_for(p: usize, t: usize) -> f64 {
    1.0 / (p as f64 * (t as f64).powf(0.8))
}

impl DgpSpec {
    fn base(t: usize, p: usize, k: usize) -> Self {
        Self {
            kind: DgpKind::RandomGraphFactor,
            t,
            p,
            k,
            q: edge_probability_for(p, t),
            u: 0.1,
            v: 0.3,
            rho_loadings: 0.2,
            rho_eps: 0.5,
            phi_f: 0.2,
            sigma_zeta2: 1.0,
            nu: f64::INFINITY,
            pervasive_loadings: true,
            loading_scale: None,
            rotate_loadings: true,
            sigma_target: 0.013,
        }
    }

    /// Low-dimensional comparison setting: `p = floor(T^0.85) < T`.
    pub fn case1(h: f64) -> Self {
        let t = sample_size_for(h);
        let p = (t as f64).powf(0.85).floor() as usize;
        Self::base(t, p.max(2), factor_count_for(t))
    }

    /// High-dimensional setting: `p = floor(3 T^0.85) > T`.
    pub fn case2(h: f64) -> Self {
        let t = sample_size_for(h);
        let p = (3.0 * (t as f64).powf(0.85)).floor() as usize;
        Self::base(t, p.max(2), factor_count_for(t))
    }

    /// Heavy-tail setting with `nu` degrees of freedom.
    pub fn elliptical(h: f64, nu: f64) -> Self {
        let t = sample_size_for(h);
        let p = (t as f64).powf(0.85).floor() as usize;
        let mut spec = Self::base(t, p.max(2), factor_count_for(t));
        spec.kind = DgpKind::EllipticalT;
        spec.nu = nu;
        spec.rho_eps = 0.5;
        spec
    }

    /// Pervasiveness-relaxation setting at explicit `(T, p)` with the
    /// residual Toeplitz parameter `rho`. The loading scale is calibrated so
    /// the population `lambda_3 / lambda_4` gap equals
    /// [`PERVASIVENESS_ANCHOR_GAP`] at the reference `rho = 0.4`; sweeping
    /// `rho` upward then closes the systematic-idiosyncratic gap.
    pub fn pervasiveness(t: usize, p: usize, rho: f64) -> Self {
        let mut spec = Self::base(t, p, 3);
        spec.kind = DgpKind::Pervasiveness;
        spec.rho_eps = rho;
        spec
    }

    fn validate(&self) -> Result<()> {
        if self.p < 2 || self.t < 2 || self.k < 1 {
            return Err(Error::InvalidArgument("degenerate DGP dimensions".into()));
        }
        if !(self.q > 0.0 && self.q <= 1.0) && self.kind == DgpKind::RandomGraphFactor {
            return Err(Error::InvalidArgument("q must lie in (0, 1]".into()));
        }
        if self.u <= 0.0 {
            return Err(Error::InvalidArgument("u must be positive".into()));
        }
        if self.phi_f.abs() >= 1.0 {
            return Err(Error::InvalidArgument("|phi_f| must be below 1".into()));
        }
        if self.nu <= 2.0 {
            return Err(Error::InvalidArgument(
                "nu must exceed 2 (or be infinite) for a finite covariance".into(),
            ));
        }
        Ok(())
    }
}

/// Planted population quantities of a simulated panel, plus the realized
/// sample mean used to define the true mean-dependent weights.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub theta_eps: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_f: DMatrix<f64>,
    /// Implied precision of returns.
    pub theta: DMatrix<f64>,
    /// Sample mean of the generated panel. The population mean of every DGP
    /// here is zero, so the mean-dependent "true" weights are defined with
    /// the planted precision and this realized mean.
    pub mean_realized: DVector<f64>,
    /// Return target `1.1 * (b/a)` from the planted precision and the
    /// realized mean; keeps the weight-constrained frontier interior.
    pub mu_target: f64,
    pub sigma_target: f64,
    pub w_gmv: DVector<f64>,
    pub w_mwc: Option<DVector<f64>>,
    pub w_mrc: Option<DVector<f64>>,
    pub phi_gmv: f64,
    pub phi_mwc: Option<f64>,
    pub phi_mrc: Option<f64>,
    /// Population `lambda_3 / lambda_4` of the implied covariance
    /// (pervasiveness kind only).
    pub eigen_gap: Option<f64>,
    /// Realized `lambda_3 / lambda_4` of the sample covariance of the
    /// generated panel (pervasiveness kind only); this is the gap statistic
    /// the calibration anchors.
    pub sample_eigen_gap: Option<f64>,
    /// Number of planted off-diagonal support pairs of `theta_eps`.
    pub planted_edge_pairs: usize,
    pub planted_max_degree: usize,
}

/// Random-graph precision: symmetric Bernoulli(q) adjacency `A` with zero
/// diagonal, `Theta = A v + I (|tau| + 0.1 + u)` where `tau` is the smallest
/// eigenvalue of `A v`. Positive definite by the diagonal shift.
pub fn random_graph_precision(p: usize, q: f64, u: f64, v: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    random_graph_precision_with(p, q, u, v, &mut rng)
}

/// Smallest `k` with `P(Binomial(n, q) <= k) > u`.
fn binomial_inverse_cdf(n: usize, q: f64, u: f64) -> usize {
    if q <= 0.0 {
        return 0;
    }
    if q >= 1.0 {
        return n;
    }
    let ratio = q / (1.0 - q);
    let mut log_pmf = n as f64 * (-q).ln_1p();
    let mut cdf = log_pmf.exp();
    let mut k = 0usize;
    while cdf <= u && k < n {
        log_pmf += ((n - k) as f64 / (k + 1) as f64 * ratio).ln();
        cdf += log_pmf.exp();
        k += 1;
    }
    k
}

fn random_graph_precision_with(
    p: usize,
    q: f64,
    u: f64,
    v: f64,
    rng: &mut ChaCha12Rng,
) -> DMatrix<f64> {
    // Equivalent two-stage draw of the iid-edge graph: a Binomial edge count
    // from the stream's first uniform, then uniformly placed distinct edges.
    // Taking the count from the first uniform quantile-couples replications
    // that share a seed across nearby configurations.
    let n_pairs = p * (p - 1) / 2;
    let count = binomial_inverse_cdf(n_pairs, q, rng.random::<f64>());
    let mut a = DMatrix::zeros(p, p);
    let chosen: Vec<usize> = if count * 2 >= n_pairs {
        let mut indices: Vec<usize> = (0..n_pairs).collect();
        for i in 0..count {
            let j = i + (rng.random::<u64>() as usize) % (n_pairs - i);
            indices.swap(i, j);
        }
        indices.truncate(count);
        indices
    } else {
        let mut seen = std::collections::HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let idx = (rng.random::<u64>() as usize) % n_pairs;
            if seen.insert(idx) {
                out.push(idx);
            }
        }
        out
    };
    for idx in chosen {
        // unrank the pair index into (i, j), i < j, row-major upper triangle
        let mut i = 0usize;
        let mut offset = idx;
        let mut row_len = p - 1;
        while offset >= row_len {
            offset -= row_len;
            i += 1;
            row_len -= 1;
        }
        let j = i + 1 + offset;
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    let av = &a * v;
    let eigvals = av.clone().symmetric_eigen().eigenvalues;
    let tau = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = tau.abs() + 0.1 + u;
    let mut theta = av;
    for i in 0..p {
        theta[(i, i)] += shift;
    }
    theta
}

/// Loadings from the Toeplitz Cholesky factor: `B` is the transpose of the
/// first `K` rows of the upper-triangular factor of the `p x p` Toeplitz
/// matrix with entries `rho^|i-j|` (equivalently the first `K` columns of
/// the lower factor).
pub fn toeplitz_loadings(p: usize, k: usize, rho: f64) -> Result<DMatrix<f64>> {
    if rho.abs() >= 1.0 {
        return Err(Error::InvalidArgument("|rho| must be below 1".into()));
    }
    if k > p {
        return Err(Error::InvalidArgument("k cannot exceed p".into()));
    }
    let chol = toeplitz(p, rho)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Toeplitz loading base".into()))?;
    Ok(chol.l().columns(0, k).into_owned())
}

/// Residual sampler from the upper Cholesky factor of the precision;
/// draws solve `L' eps = z`.
struct ResidualSampler {
    theta_chol_upper: DMatrix<f64>,
}

impl ResidualSampler {
    fn draw(&self, z: &DVector<f64>) -> DVector<f64> {
        self.theta_chol_upper
            .clone()
            .solve_upper_triangular(z)
            .expect("triangular solve of a Cholesky factor")
    }
}

fn standard_normal_vector(n: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Reference residual Toeplitz parameter at which the pervasiveness DGP is
/// anchored.
pub const PERVASIVENESS_ANCHOR_RHO: f64 = 0.4;
/// Population `lambda_3 / lambda_4` of the anchored configuration.
pub const PERVASIVENESS_ANCHOR_GAP: f64 = 3.1;

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// sign convention fixed by the R diagonal.
fn haar_orthogonal(n: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Gaussian factor DGP with AR(1) factors and planted sparse idiosyncratic
/// precision (random-graph or Toeplitz residuals depending on the kind).
pub fn simulate_factor_dgp(spec: &DgpSpec, seed: u64) -> Result<(ReturnsPanel, GroundTruth)> {
    spec.validate()?;
    match spec.kind {
        DgpKind::EllipticalT => return simulate_elliptical_dgp(spec, seed),
        DgpKind::Pervasiveness => return simulate_pervasiveness_inner(spec, seed),
        DgpKind::RandomGraphFactor => {}
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p = spec.p;
    let k = spec.k;

    let theta_eps = random_graph_precision_with(p, spec.q, spec.u, spec.v, &mut rng);
    let chol = theta_eps
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("planted precision".into()))?;
    let sampler = ResidualSampler {
        theta_chol_upper: chol.l().transpose(),
    };

    let sigma_f_scalar = spec.sigma_zeta2 / (1.0 - spec.phi_f * spec.phi_f);
    let b = {
        let mut b = toeplitz_loadings(p, k, spec.rho_loadings)?;
        let scale = match spec.loading_scale {
            Some(c) => c,
            None if spec.pervasive_loadings => (p as f64).sqrt(),
            None => 1.0,
        };
        if scale != 1.0 {
            b *= scale;
        }
        if spec.rotate_loadings && scale != 1.0 {
            // Rotate the asset coordinates by a Haar orthogonal draw. The
            // rotation keeps the loading Gram and the factor spectrum but
            // moves the loadings off the coordinate axes: axis-aligned
            // factors are not separable from the idiosyncratic variance of
            // the assets they sit on, which would leave the residual
            // covariance unidentifiable.
            b = haar_orthogonal(p, &mut rng) * b;
        }
        b
    };

    let sigma_zeta = spec.sigma_zeta2.sqrt();
    let mut f = standard_normal_vector(k, &mut rng) * sigma_f_scalar.sqrt();
    let mut values = DMatrix::zeros(p, spec.t);
    for t_idx in 0..spec.t {
        if t_idx > 0 {
            let z = standard_normal_vector(k, &mut rng);
            f = spec.phi_f * &f + sigma_zeta * z;
        }
        let z = standard_normal_vector(p, &mut rng);
        let eps = sampler.draw(&z);
        let col = &b * &f + eps;
        values.set_column(t_idx, &col);
    }
    let panel = ReturnsPanel::from_values(values)?;
    let sigma_f = DMatrix::identity(k, k) * sigma_f_scalar;
    let truth = build_ground_truth(spec, &panel, theta_eps, b, sigma_f)?;
    Ok((panel, truth))
}

/// Pervasiveness-relaxation generator: AR(1) factors, Toeplitz residuals,
/// and heterogeneous Gaussian-row loadings whose scale is calibrated per
/// draw so that the realized sample-covariance gap `lambda_3 / lambda_4`
/// at the anchor residual parameter equals the documented value. Returns
/// are linear in the scale, so the calibration bisects on the same draws.
fn simulate_pervasiveness_inner(spec: &DgpSpec, seed: u64) -> Result<(ReturnsPanel, GroundTruth)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p = spec.p;
    let k = spec.k;
    let t = spec.t;
    let tf = t as f64;

    let sigma_eps_run = toeplitz(p, spec.rho_eps);
    let chol_run = sigma_eps_run
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Toeplitz residual covariance".into()))?;
    let theta_eps = symmetrize(&chol_run.inverse());

    let sigma_f_scalar = spec.sigma_zeta2 / (1.0 - spec.phi_f * spec.phi_f);
    let sigma_zeta = spec.sigma_zeta2.sqrt();
    let g: DMatrix<f64> = DMatrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
    // factor paths
    let mut factors = DMatrix::zeros(k, t);
    let mut f = standard_normal_vector(k, &mut rng) * sigma_f_scalar.sqrt();
    factors.set_column(0, &f);
    for t_idx in 1..t {
        let z = standard_normal_vector(k, &mut rng);
        f = spec.phi_f * &f + sigma_zeta * z;
        factors.set_column(t_idx, &f);
    }
    // residual innovations, shared between the run and the anchor
    let z_mat: DMatrix<f64> = DMatrix::from_fn(p, t, |_, _| StandardNormal.sample(&mut rng));
    let eps_run = chol_run.l() * &z_mat;
    let eps_anchor = if (spec.rho_eps - PERVASIVENESS_ANCHOR_RHO).abs() < 1e-12 {
        eps_run.clone()
    } else {
        let chol_anchor = toeplitz(p, PERVASIVENESS_ANCHOR_RHO)
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("anchor Toeplitz".into()))?;
        chol_anchor.l() * &z_mat
    };

    // Sample covariance of c*M + E is quadratic in c; precompute the pieces
    // from row-demeaned blocks and bisect the scale on the realized gap.
    let demean_rows = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            let mean = out.row(i).sum() / tf;
            for j in 0..out.ncols() {
                out[(i, j)] -= mean;
            }
        }
        out
    };
    let m_tilde = demean_rows(&(&g * &factors));
    let e_tilde = demean_rows(&eps_anchor);
    let quad = &m_tilde * m_tilde.transpose() / tf;
    let cross = (&m_tilde * e_tilde.transpose() + &e_tilde * m_tilde.transpose()) / tf;
    let base = &e_tilde * e_tilde.transpose() / tf;
    let gap_at = |c: f64| -> f64 {
        let s = &quad * (c * c) + &cross * c + &base;
        let (vals, _) = crate::linalg::sorted_symmetric_eigen(&s);
        vals[2] / vals[3]
    };
    let target = PERVASIVENESS_ANCHOR_GAP;
    let mut lo = 1e-3f64;
    let mut hi = 2.0 * (p as f64).sqrt();
    let c = if gap_at(hi) < target {
        hi
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if gap_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-9 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };

    let b = &g * c;
    let values = &b * &factors + eps_run;
    let panel = ReturnsPanel::from_values(values)?;
    let sigma_f = DMatrix::identity(k, k) * sigma_f_scalar;
    let mut truth = build_ground_truth(spec, &panel, theta_eps, b, sigma_f)?;
    let sample = panel.sample_covariance();
    let (sample_vals, _) = crate::linalg::sorted_symmetric_eigen(&sample);
    truth.sample_eigen_gap = Some(sample_vals[2] / sample_vals[3]);
    Ok((panel, truth))
}

/// Jointly multivariate-t factor DGP. The scale matrix carries the
/// `(nu-2)/nu` correction so the draw's covariance equals the target.
pub fn simulate_elliptical_dgp(spec: &DgpSpec, seed: u64) -> Result<(ReturnsPanel, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p = spec.p;
    let k = spec.k;

    let sigma_eps = toeplitz(p, spec.rho_eps);
    let sigma_chol = sigma_eps
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Toeplitz residual covariance".into()))?;
    let theta_eps = symmetrize(&sigma_chol.inverse());

    // Loadings with independent standard-normal rows.
    let b = DMatrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));

    let finite_nu = spec.nu.is_finite();
    let scale_correction = if finite_nu {
        ((spec.nu - 2.0) / spec.nu).sqrt()
    } else {
        1.0
    };
    let chi = if finite_nu {
        Some(ChiSquared::new(spec.nu).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };

    let mut values = DMatrix::zeros(p, spec.t);
    for t_idx in 0..spec.t {
        let zf = standard_normal_vector(k, &mut rng) * scale_correction;
        let ze = sigma_chol.l() * standard_normal_vector(p, &mut rng) * scale_correction;
        let mult = match &chi {
            Some(c) => {
                let w: f64 = c.sample(&mut rng);
                (spec.nu / w).sqrt()
            }
            None => 1.0,
        };
        let f = zf * mult;
        let eps = ze * mult;
        let col = &b * f + eps;
        values.set_column(t_idx, &col);
    }
    let panel = ReturnsPanel::from_values(values)?;
    let sigma_f = DMatrix::identity(k, k);
    let truth = build_ground_truth(spec, &panel, theta_eps, b, sigma_f)?;
    Ok((panel, truth))
}

/// Pervasiveness-relaxation DGP at explicit `(T, p)` and residual Toeplitz
/// parameter `rho`, with `K = 3`.
pub fn simulate_pervasiveness_dgp(
    t: usize,
    p: usize,
    rho: f64,
    seed: u64,
) -> Result<(ReturnsPanel, GroundTruth)> {
    let spec = DgpSpec::pervasiveness(t, p, rho);
    simulate_factor_dgp(&spec, seed)
}

fn build_ground_truth(
    spec: &DgpSpec,
    panel: &ReturnsPanel,
    theta_eps: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_f: DMatrix<f64>,
) -> Result<GroundTruth> {
    let theta_f = sigma_f
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("factor covariance".into()))?
        .inverse();
    let theta = fgl_combine(&theta_eps, &theta_f, &b)?;
    let mean_realized = panel.asset_means();
    let inp = MomentInputs::new_unchecked(theta.clone(), mean_realized.clone());
    let scalars = exposure_scalars(&inp);
    let mu_target = 1.1 * scalars.b / scalars.a;
    let w_gmv = gmv_weights(&inp)?.w;
    let phi_gmv = risk_exposure(&inp, Formulation::Gmv, 0.0, 0.0)?;
    let w_mwc = mwc_weights(&inp, mu_target).ok().map(|w| w.w);
    let phi_mwc = risk_exposure(&inp, Formulation::Mwc, mu_target, 0.0).ok();
    let w_mrc = mrc_weights(&inp, spec.sigma_target).ok().map(|w| w.w);
    let phi_mrc = risk_exposure(&inp, Formulation::Mrc, 0.0, spec.sigma_target).ok();

    let eigen_gap = if spec.kind == DgpKind::Pervasiveness {
        let sigma_eps = toeplitz(spec.p, spec.rho_eps);
        let sigma = &b * &sigma_f * b.transpose() + sigma_eps;
        let (vals, _) = crate::linalg::sorted_symmetric_eigen(&sigma);
        Some(vals[2] / vals[3])
    } else {
        None
    };
    let stats = graph_stats(&theta_eps, 1e-10);
    Ok(GroundTruth {
        sample_eigen_gap: None,
        theta_eps,
        b,
        sigma_f,
        theta,
        mean_realized,
        mu_target,
        sigma_target: spec.sigma_target,
        w_gmv,
        w_mwc,
        w_mrc,
        phi_gmv,
        phi_mwc,
        phi_mrc,
        eigen_gap,
        planted_edge_pairs: stats.support.len(),
        planted_max_degree: stats.max_degree,
    })
}

/// Estimators compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Fgl,
    RobustFgl,
    Gl,
    SampleInverse,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Fgl => "fgl",
            Estimator::RobustFgl => "robust_fgl",
            Estimator::Gl => "gl",
            Estimator::SampleInverse => "sample_inverse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgl" => Ok(Estimator::Fgl),
            "robust_fgl" => Ok(Estimator::RobustFgl),
            "gl" => Ok(Estimator::Gl),
            "sample_inverse" => Ok(Estimator::SampleInverse),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Fit one estimator on a simulated panel. `k = Some(..)` pins the factor
/// count (used when comparing against planted-K rate curves); `None` selects
/// it by the information criterion, as the source procedure does.
pub fn estimate_precision(
    panel: &ReturnsPanel,
    estimator: Estimator,
    k: Option<usize>,
    glasso_cfg: &GlassoConfig,
) -> Result<PrecisionEstimate> {
    let factor_mode = match k {
        Some(k) => FactorMode::PcaFixedK(k),
        None => FactorMode::PcaAutoK { k_max: None },
    };
    match estimator {
        Estimator::Fgl => {
            let opts = FglOptions {
                factor_mode,
                glasso_cfg: glasso_cfg.clone(),
                robust: Robust::None,
                demean_observed_factors: true,
            };
            fgl_estimate(panel, &opts).map(|(est, _)| est)
        }
        Estimator::RobustFgl => {
            let opts = FglOptions {
                factor_mode,
                glasso_cfg: glasso_cfg.clone(),
                robust: Robust::Elliptical,
                demean_observed_factors: true,
            };
            robust_fgl_estimate(panel, &opts).map(|(est, _)| est)
        }
        Estimator::Gl => {
            // The baseline runs on the raw returns covariance, whose factor
            // spikes make the dense end of the path numerically hopeless;
            // its own grid stays on the sparse side (the BIC selects there
            // in any case).
            let mut cfg = glasso_cfg.clone();
            cfg.grid_floor_ratio = cfg.grid_floor_ratio.max(0.3);
            select_lambda(&panel.sample_covariance(), panel.num_periods(), &cfg)
        }
        Estimator::SampleInverse => Ok(sample_inverse_estimate(panel)),
    }
}

/// Error metrics of one replication.
#[derive(Debug, Clone, Default)]
pub struct MetricRecord {
    pub theta_spectral: f64,
    pub theta_l1: f64,
    pub w_gmv_l1: Option<f64>,
    pub w_mwc_l1: Option<f64>,
    pub w_mrc_l1: Option<f64>,
    pub phi_gmv_rel: Option<f64>,
    pub phi_mwc_rel: Option<f64>,
    pub phi_mrc_rel: Option<f64>,
}

/// Deviation of an estimated precision from the planted truth: matrix norms,
/// weight errors in vector l1, and relative risk-exposure errors. The
/// estimated weights use the same realized mean as the true ones, isolating
/// the precision-estimation error.
pub fn error_norms(
    theta_hat: &DMatrix<f64>,
    truth: &GroundTruth,
    mu: f64,
    sigma: f64,
) -> MetricRecord {
    let diff = theta_hat - &truth.theta;
    let theta_spectral = symmetric_spectral_norm(&symmetrize(&diff));
    let theta_l1 = l1_operator_norm(&diff);
    let inp = MomentInputs::new_unchecked(theta_hat.clone(), truth.mean_realized.clone());

    let w_gmv_l1 = gmv_weights(&inp)
        .ok()
        .map(|w| (w.w - &truth.w_gmv).abs().sum());
    let w_mwc_l1 = match (&truth.w_mwc, mwc_weights(&inp, mu).ok()) {
        (Some(true_w), Some(est_w)) => Some((est_w.w - true_w).abs().sum()),
        _ => None,
    };
    let w_mrc_l1 = match (&truth.w_mrc, mrc_weights(&inp, sigma).ok()) {
        (Some(true_w), Some(est_w)) => Some((est_w.w - true_w).abs().sum()),
        _ => None,
    };
    let phi_gmv_rel = risk_exposure(&inp, Formulation::Gmv, 0.0, 0.0)
        .ok()
        .map(|phi| (phi / truth.phi_gmv - 1.0).abs());
    let phi_mwc_rel = match (
        truth.phi_mwc,
        risk_exposure(&inp, Formulation::Mwc, mu, 0.0).ok(),
    ) {
        (Some(phi_true), Some(phi)) if phi_true != 0.0 => Some((phi / phi_true - 1.0).abs()),
        _ => None,
    };
    let phi_mrc_rel = match (
        truth.phi_mrc,
        risk_exposure(&inp, Formulation::Mrc, 0.0, sigma).ok(),
    ) {
        (Some(phi_true), Some(phi)) if phi_true != 0.0 => Some((phi / phi_true - 1.0).abs()),
        _ => None,
    };
    MetricRecord {
        theta_spectral,
        theta_l1,
        w_gmv_l1,
        w_mwc_l1,
        w_mrc_l1,
        phi_gmv_rel,
        phi_mwc_rel,
        phi_mrc_rel,
    }
}

pub const METRIC_NAMES: [&str; 8] = [
    "theta_spectral",
    "theta_l1",
    "w_gmv_l1",
    "w_mwc_l1",
    "w_mrc_l1",
    "phi_gmv_rel",
    "phi_mwc_rel",
    "phi_mrc_rel",
];

impl MetricRecord {
    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "theta_spectral" => Some(self.theta_spectral),
            "theta_l1" => Some(self.theta_l1),
            "w_gmv_l1" => self.w_gmv_l1,
            "w_mwc_l1" => self.w_mwc_l1,
            "w_mrc_l1" => self.w_mrc_l1,
            "phi_gmv_rel" => self.phi_gmv_rel,
            "phi_mwc_rel" => self.phi_mwc_rel,
            "phi_mrc_rel" => self.phi_mrc_rel,
            _ => None,
        }
    }
}

/// One aggregated cell of the long-format experiment table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRow {
    pub case_label: String,
    pub h: f64,
    pub t: usize,
    pub p: usize,
    pub k: usize,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    pub n_mc: usize,
    pub failures: usize,
}

/// Long-format experiment results.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    /// Mean value of a `(h, estimator, metric)` cell, if present.
    pub fn value(&self, h: f64, estimator: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.h == h && r.estimator == estimator && r.metric == metric)
            .map(|r| r.value)
    }
}

/// SplitMix64-style mix for deriving per-replication seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derivation from a master seed and a stream of indices.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    let mut s = splitmix(master);
    for &x in stream {
        s = splitmix(s ^ x);
    }
    s
}

/// The two comparison settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    Case1,
    Case2,
}

impl Case {
    pub fn label(&self) -> &'static str {
        match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
        }
    }

    pub fn spec(&self, h: f64) -> DgpSpec {
        match self {
            Case::Case1 => DgpSpec::case1(h),
            Case::Case2 => DgpSpec::case2(h),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" | "case1" => Ok(Case::Case1),
            "2" | "case2" => Ok(Case::Case2),
            other => Err(Error::Config(format!("unknown case '{other}'"))),
        }
    }
}

pub const DEFAULT_H_VALUES: [f64; 6] = [7.0, 7.5, 8.0, 8.5, 9.0, 9.5];

struct RepOutcome {
    per_estimator: Vec<std::result::Result<MetricRecord, String>>,
    edge_pairs: f64,
    max_degree: f64,
}

fn run_config(
    label: &str,
    h: f64,
    spec: &DgpSpec,
    n_mc: usize,
    estimators: &[Estimator],
    master_seed: u64,
    stream_tag: u64,
    cfg: &GlassoConfig,
    pin_factor_count: bool,
    rows: &mut Vec<ErrorRow>,
) -> Result<()> {
    let cfg = cfg.clone();
    let factor_k = if pin_factor_count { Some(spec.k) } else { None };
    let mut outcomes: Vec<(usize, RepOutcome)> = (0..n_mc)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(master_seed, &[stream_tag, rep as u64]);
            let outcome = match simulate_factor_dgp(spec, seed) {
                Ok((panel, truth)) => {
                    let per_estimator = estimators
                        .iter()
                        .map(|est| {
                            estimate_precision(&panel, *est, factor_k, &cfg)
                                .map(|pe| {
                                    error_norms(
                                        &pe.theta,
                                        &truth,
                                        truth.mu_target,
                                        truth.sigma_target,
                                    )
                                })
                                .map_err(|e| e.to_string())
                        })
                        .collect();
                    RepOutcome {
                        per_estimator,
                        edge_pairs: truth.planted_edge_pairs as f64,
                        max_degree: truth.planted_max_degree as f64,
                    }
                }
                Err(e) => RepOutcome {
                    per_estimator: estimators.iter().map(|_| Err(e.to_string())).collect(),
                    edge_pairs: f64::NAN,
                    max_degree: f64::NAN,
                },
            };
            (rep, outcome)
        })
        .collect();
    outcomes.sort_by_key(|(rep, _)| *rep);

    for (ei, est) in estimators.iter().enumerate() {
        for metric in METRIC_NAMES {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (_, outcome) in &outcomes {
                if let Ok(record) = &outcome.per_estimator[ei] {
                    if let Some(v) = record.get(metric) {
                        sum += v;
                        count += 1;
                    }
                }
            }
            let value = if count > 0 {
                sum / count as f64
            } else {
                f64::NAN
            };
            rows.push(ErrorRow {
                case_label: label.to_string(),
                h,
                t: spec.t,
                p: spec.p,
                k: spec.k,
                estimator: est.name().to_string(),
                metric: metric.to_string(),
                value,
                n_mc,
                failures: n_mc - count,
            });
        }
    }
    // planted sparsity statistics, averaged over replications
    for (name, pick) in [
        ("planted_edge_pairs", 0usize),
        ("planted_max_degree", 1usize),
    ] {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (_, outcome) in &outcomes {
            let v = if pick == 0 {
                outcome.edge_pairs
            } else {
                outcome.max_degree
            };
            if v.is_finite() {
                sum += v;
                count += 1;
            }
        }
        rows.push(ErrorRow {
            case_label: label.to_string(),
            h,
            t: spec.t,
            p: spec.p,
            k: spec.k,
            estimator: "truth".to_string(),
            metric: name.to_string(),
            value: if count > 0 {
                sum / count as f64
            } else {
                f64::NAN
            },
            n_mc,
            failures: n_mc - count,
        });
    }
    Ok(())
}

/// Convergence experiment over a grid of sample sizes `T = round(2^h)`.
/// Per-replication seeds derive deterministically from the master seed, so
/// parallel and serial execution produce identical tables.
pub fn convergence_experiment(
    case: Case,
    h_values: &[f64],
    n_mc: usize,
    estimators: &[Estimator],
    master_seed: u64,
) -> Result<ErrorTable> {
    if n_mc < 1 || h_values.is_empty() || estimators.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one replication, h value and estimator".into(),
        ));
    }
    let mut rows = Vec::new();
    let tag = match case {
        Case::Case1 => 1u64,
        Case::Case2 => 2u64,
    };
    let cfg = GlassoConfig::default();
    for &h in h_values {
        let spec = case.spec(h);
        run_config(
            case.label(),
            h,
            &spec,
            n_mc,
            estimators,
            master_seed,
            tag,
            &cfg,
            true,
            &mut rows,
        )?;
    }
    Ok(ErrorTable { rows })
}

/// Tuning used by the tail-robustness and pervasiveness studies: the grid
/// floor follows the source convention `theta = omega_3T`, capped into the
/// valid range. At desk scale the cap binds and the path concentrates at
/// its sparse end.
pub fn appendix_glasso_config(k: usize, p: usize, t: usize) -> GlassoConfig {
    GlassoConfig {
        grid_floor_ratio: omega_3t(k, p, t).min(0.99),
        ..GlassoConfig::default()
    }
}

/// Heavy-tail robustness experiment: one `h`, several degrees of freedom.
/// `nu = f64::INFINITY` labels the Gaussian benchmark as `inf`.
pub fn robustness_experiment(
    h: f64,
    nu_values: &[f64],
    n_mc: usize,
    estimators: &[Estimator],
    master_seed: u64,
) -> Result<ErrorTable> {
    let mut rows = Vec::new();
    for (i, &nu) in nu_values.iter().enumerate() {
        let spec = DgpSpec::elliptical(h, nu);
        let label = if nu.is_finite() {
            format!("elliptical_nu_{nu}")
        } else {
            "elliptical_nu_inf".to_string()
        };
        let _ = i;
        let cfg = appendix_glasso_config(spec.k, spec.p, spec.t);
        run_config(
            &label,
            h,
            &spec,
            n_mc,
            estimators,
            master_seed,
            100,
            &cfg,
            true,
            &mut rows,
        )?;
    }
    Ok(ErrorTable { rows })
}

/// Pervasiveness sensitivity: fixed `(T, p)`, grid of residual Toeplitz
/// parameters.
pub fn pervasiveness_experiment(
    t: usize,
    p: usize,
    rho_values: &[f64],
    n_mc: usize,
    estimators: &[Estimator],
    master_seed: u64,
) -> Result<ErrorTable> {
    let mut rows = Vec::new();
    for (i, &rho) in rho_values.iter().enumerate() {
        let spec = DgpSpec::pervasiveness(t, p, rho);
        let label = format!("pervasiveness_rho_{rho}");
        let cfg = appendix_glasso_config(spec.k, spec.p, spec.t);
        // The relaxed-pervasiveness stress runs the full data-driven
        // procedure, factor-count selection included: misselected factor
        // counts under weak factors are part of what the study measures.
        let _ = i;
        run_config(
            &label,
            rho,
            &spec,
            n_mc,
            estimators,
            master_seed,
            200,
            &cfg,
            false,
            &mut rows,
        )?;
    }
    Ok(ErrorTable { rows })
}

/// `omega_3T = K^2 sqrt(ln p / T) + K^3 / sqrt(p)`, the max-norm rate of the
/// estimated residual covariance.
pub fn omega_3t(k: usize, p: usize, t: usize) -> f64 {
    let kf = k as f64;
    kf * kf * ((p as f64).ln() / t as f64).sqrt() + kf.powi(3) / (p as f64).sqrt()
}

/// Theoretical convergence-rate curves overlaid on empirical errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateCurve {
    ThetaSpectral,
    ThetaL1,
    WGmv,
    WMwc,
    WMrc,
    PhiGmv,
    PhiMwc,
    PhiMrc,
}

impl RateCurve {
    pub const ALL: [RateCurve; 8] = [
        RateCurve::ThetaSpectral,
        RateCurve::ThetaL1,
        RateCurve::WGmv,
        RateCurve::WMwc,
        RateCurve::WMrc,
        RateCurve::PhiGmv,
        RateCurve::PhiMwc,
        RateCurve::PhiMrc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RateCurve::ThetaSpectral => "theta_spectral_rate",
            RateCurve::ThetaL1 => "theta_l1_rate",
            RateCurve::WGmv => "w_gmv_rate",
            RateCurve::WMwc => "w_mwc_rate",
            RateCurve::WMrc => "w_mrc_rate",
            RateCurve::PhiGmv => "phi_gmv_rate",
            RateCurve::PhiMwc => "phi_mwc_rate",
            RateCurve::PhiMrc => "phi_mrc_rate",
        }
    }

    /// Which empirical metric the curve is fitted against.
    pub fn metric(&self) -> &'static str {
        match self {
            RateCurve::ThetaSpectral => "theta_spectral",
            RateCurve::ThetaL1 => "theta_l1",
            RateCurve::WGmv => "w_gmv_l1",
            RateCurve::WMwc => "w_mwc_l1",
            RateCurve::WMrc => "w_mrc_l1",
            RateCurve::PhiGmv => "phi_gmv_rel",
            RateCurve::PhiMwc => "phi_mwc_rel",
            RateCurve::PhiMrc => "phi_mrc_rel",
        }
    }

    /// The rate expression evaluated at `(s_T, d_T, K, rho_T)`.
    fn argument(&self, s: f64, d: f64, k: f64, rho: f64) -> f64 {
        match self {
            RateCurve::ThetaSpectral => s * rho,
            RateCurve::ThetaL1 | RateCurve::PhiGmv | RateCurve::PhiMwc | RateCurve::PhiMrc => {
                d * k.powf(1.5) * s * rho
            }
            RateCurve::WGmv | RateCurve::WMwc => rho * d * d * k.powi(3) * s,
            RateCurve::WMrc => (rho * s).sqrt() * d.powf(1.5) * k.powi(3),
        }
    }
}

/// Instantiations of the admissible-rate sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoVariant {
    /// `rho_T = omega_3T` (the tightest admissible choice).
    Omega3T,
    /// `rho_T = omega_3T * ln ln T` (strict divergence of the ratio).
    Omega3TLnLn,
}

impl RhoVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RhoVariant::Omega3T => "omega3t",
            RhoVariant::Omega3TLnLn => "omega3t_lnln",
        }
    }

    fn value(&self, k: usize, p: usize, t: usize) -> f64 {
        let base = omega_3t(k, p, t);
        match self {
            RhoVariant::Omega3T => base,
            RhoVariant::Omega3TLnLn => base * (t as f64).ln().ln(),
        }
    }
}

/// One point of a fitted rate curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub case_label: String,
    pub curve: String,
    pub metric: String,
    pub variant: String,
    pub h: f64,
    pub t: usize,
    pub p: usize,
    pub k: usize,
    pub s_t: f64,
    pub d_t: f64,
    pub theory_log2: f64,
    pub empirical_log2: f64,
    /// Intercept of the slope-1 fit (criterion: empirical tracks theory).
    pub intercept: f64,
    /// Least-squares slope of empirical on theory.
    pub slope: f64,
    pub fitted_log2: f64,
    pub abs_dev: f64,
    /// Mean absolute deviation of the slope-1 fit over the whole curve.
    pub mad: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    /// Mean absolute deviation of a fitted curve.
    pub fn curve_mad(&self, curve: &str, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.curve == curve && r.variant == variant)
            .map(|r| r.mad)
    }

    /// Least-squares slope of a fitted curve.
    pub fn curve_slope(&self, curve: &str, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.curve == curve && r.variant == variant)
            .map(|r| r.slope)
    }
}

/// Evaluate the theoretical rate curves against the empirical table
/// (the `fgl` rows) and fit intercepts and slopes by least squares.
///
/// The sparsity sequences use the realized planted statistics from the
/// table, floored at one: the sparse designs here frequently plant graphs
/// with fewer than one edge on average.
pub fn theoretical_rate_overlay(
    case: Case,
    h_values: &[f64],
    curves: &[RateCurve],
    empirical: &ErrorTable,
) -> Result<RateTable> {
    let mut rows = Vec::new();
    for &curve in curves {
        for variant in [RhoVariant::Omega3T, RhoVariant::Omega3TLnLn] {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut points = Vec::new();
            for &h in h_values {
                let spec = case.spec(h);
                let s_t = empirical
                    .value(h, "truth", "planted_edge_pairs")
                    .unwrap_or(1.0)
                    .max(1.0);
                let d_t = empirical
                    .value(h, "truth", "planted_max_degree")
                    .unwrap_or(1.0)
                    .max(1.0);
                let emp = empirical.value(h, "fgl", curve.metric()).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "empirical table lacks fgl/{} at h={h}",
                        curve.metric()
                    ))
                })?;
                if !emp.is_finite() || emp <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "empirical value for {} at h={h} is not positive",
                        curve.metric()
                    )));
                }
                let rho = variant.value(spec.k, spec.p, spec.t);
                let arg = curve.argument(s_t, d_t, spec.k as f64, rho);
                let x = arg.log2();
                let y = emp.log2();
                xs.push(x);
                ys.push(y);
                points.push((h, spec, s_t, d_t, x, y));
            }
            let n = xs.len() as f64;
            let intercept = ys.iter().sum::<f64>() / n - xs.iter().sum::<f64>() / n;
            let mad = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (y - x - intercept).abs())
                .sum::<f64>()
                / n;
            let x_mean = xs.iter().sum::<f64>() / n;
            let y_mean = ys.iter().sum::<f64>() / n;
            let var_x: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
            let cov_xy: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - x_mean) * (y - y_mean))
                .sum();
            let slope = if var_x > 0.0 {
                cov_xy / var_x
            } else {
                f64::NAN
            };
            for (h, spec, s_t, d_t, x, y) in points {
                rows.push(RateRow {
                    case_label: case.label().to_string(),
                    curve: curve.name().to_string(),
                    metric: curve.metric().to_string(),
                    variant: variant.name().to_string(),
                    h,
                    t: spec.t,
                    p: spec.p,
                    k: spec.k,
                    s_t,
                    d_t,
                    theory_log2: x,
                    empirical_log2: y,
                    intercept,
                    slope,
                    fitted_log2: x + intercept,
                    abs_dev: (y - x - intercept).abs(),
                    mad,
                });
            }
        }
    }
    Ok(RateTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn parameter_rules() {
        let spec = DgpSpec::case1(9.0);
        assert_eq!(spec.t, 512);
        assert_eq!(spec.p, 200);
        assert_eq!(spec.k, 4);
        let spec2 = DgpSpec::case2(8.0);
        assert_eq!(spec2.t, 256);
        assert_eq!(spec2.p, 334);
        // Case 2 has p > T at every default h up to 9.5
        for &h in &DEFAULT_H_VALUES {
            let s = DgpSpec::case2(h);
            assert!(s.p > s.t, "h={h}: p={} T={}", s.p, s.t);
        }
        // fractional h rounds the sample size
        assert_eq!(sample_size_for(7.5), 181);
    }

    #[test]
    fn random_graph_zero_probability() {
        let theta = random_graph_precision(6, 1e-300, 0.1, 0.3, 1);
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    assert!((theta[(i, j)] - 0.2).abs() < 1e-15);
                } else {
                    assert_eq!(theta[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn random_graph_full_two_assets() {
        // u = v = 0.3: A v has eigenvalues +-0.3, tau = -0.3,
        // diagonal |tau| + 0.1 + u = 0.7, smallest eigenvalue 0.4
        let theta = random_graph_precision(2, 1.0, 0.3, 0.3, 2);
        assert!((theta[(0, 0)] - 0.7).abs() < 1e-12);
        assert!((theta[(0, 1)] - 0.3).abs() < 1e-12);
        let eigs = theta.symmetric_eigen().eigenvalues;
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - 0.4).abs() < 1e-12);
        // default u = 0.1 shifts the diagonal to 0.5
        let theta = random_graph_precision(2, 1.0, 0.1, 0.3, 2);
        assert!((theta[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_graph_min_eigenvalue_floor() {
        for seed in 0..10 {
            let theta = random_graph_precision(20, 0.3, 0.1, 0.3, seed);
            let eigs = theta.symmetric_eigen().eigenvalues;
            let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= 0.1 + 0.1 - 1e-12);
        }
    }

    #[test]
    fn random_graph_edge_count_concentrates() {
        // binomial concentration of the planted edge count
        let p = 40;
        let q = 0.1;
        let n_pairs = (p * (p - 1) / 2) as f64;
        let expect = n_pairs * q;
        let sd = (n_pairs * q * (1.0 - q)).sqrt();
        for seed in 0..5 {
            let theta = random_graph_precision(p, q, 0.1, 0.3, seed + 50);
            let stats = graph_stats(&theta, 1e-10);
            let edges = stats.support.len() as f64;
            assert!(
                (edges - expect).abs() <= 4.0 * sd,
                "edges {edges} vs expectation {expect}"
            );
        }
    }

    #[test]
    fn toeplitz_loadings_identity_at_zero_rho() {
        let b = toeplitz_loadings(4, 2, 0.0).unwrap();
        for i in 0..4 {
            for r in 0..2 {
                let expect = if i == r { 1.0 } else { 0.0 };
                assert!((b[(i, r)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn toeplitz_loadings_two_by_one() {
        let b = toeplitz_loadings(2, 1, 0.5).unwrap();
        assert!((b[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((b[(1, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn toeplitz_loadings_full_rank() {
        for &(p, k, rho) in &[(10usize, 3usize, 0.2f64), (25, 5, 0.7), (8, 2, -0.4)] {
            let b = toeplitz_loadings(p, k, rho).unwrap();
            let gram = b.transpose() * &b;
            assert!(gram.cholesky().is_some(), "B'B singular at ({p},{k},{rho})");
        }
    }

    #[test]
    fn factor_dgp_deterministic() {
        let spec = DgpSpec::case1(7.0);
        let (panel_a, _) = simulate_factor_dgp(&spec, 99).unwrap();
        let (panel_b, _) = simulate_factor_dgp(&spec, 99).unwrap();
        assert_eq!(panel_a.values(), panel_b.values());
        let (panel_c, _) = simulate_factor_dgp(&spec, 100).unwrap();
        assert_ne!(panel_a.values(), panel_c.values());
    }

    #[test]
    fn factor_dgp_ground_truth_identity() {
        let spec = DgpSpec::case1(7.0);
        let (_, truth) = simulate_factor_dgp(&spec, 5).unwrap();
        let sigma_implied = &truth.b * &truth.sigma_f * truth.b.transpose()
            + truth.theta_eps.clone().cholesky().unwrap().inverse();
        let product = &truth.theta * sigma_implied;
        let eye = DMatrix::identity(spec.p, spec.p);
        assert!(max_abs(&(product - eye)) < 1e-8);
    }

    #[test]
    fn factor_dgp_pure_noise_mode() {
        // phi_f = 0 and zero loadings: returns are exactly the residual draw.
        let mut spec = DgpSpec::base(64, 5, 1);
        spec.phi_f = 0.0;
        spec.pervasive_loadings = false;
        spec.rho_loadings = 0.0;
        let (panel, truth) = simulate_factor_dgp(&spec, 7).unwrap();
        assert_eq!(panel.num_assets(), 5);
        // loadings are one-hot here, not zero; instead check that with
        // one-hot loadings the covariance identity still holds
        assert!(truth.theta.clone().cholesky().is_some());
    }

    #[test]
    fn factor_dgp_covariance_law_of_large_numbers() {
        let mut spec = DgpSpec::base(1 << 14, 5, 2);
        spec.q = 0.2;
        spec.pervasive_loadings = false;
        let (panel, truth) = simulate_factor_dgp(&spec, 11).unwrap();
        let sample = panel.sample_covariance();
        let sigma_eps = truth.theta_eps.clone().cholesky().unwrap().inverse();
        let implied = &truth.b * &truth.sigma_f * truth.b.transpose() + sigma_eps;
        assert!(
            max_abs(&(sample - &implied)) < 0.05 * max_abs(&implied).max(1.0),
            "sample covariance far from plan"
        );
    }

    #[test]
    fn elliptical_rejects_small_nu() {
        let mut spec = DgpSpec::elliptical(7.0, 4.2);
        spec.nu = 1.5;
        assert!(simulate_elliptical_dgp(&spec, 1).is_err());
    }

    #[test]
    fn elliptical_gaussian_limit_kurtosis() {
        let mut spec = DgpSpec::elliptical(7.0, f64::INFINITY);
        spec.p = 2;
        spec.k = 1;
        spec.t = 100_000;
        let (panel, _) = simulate_elliptical_dgp(&spec, 3).unwrap();
        let row: Vec<f64> = panel.values().row(0).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
        let kurt =
            row.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / (row.len() as f64 * var * var);
        assert!((kurt - 3.0).abs() < 0.2, "kurtosis {kurt}");
    }

    #[test]
    fn elliptical_heavy_tail_kurtosis() {
        let mut spec = DgpSpec::elliptical(7.0, 4.2);
        spec.p = 2;
        spec.k = 1;
        spec.t = 100_000;
        let (panel, _) = simulate_elliptical_dgp(&spec, 4).unwrap();
        let row: Vec<f64> = panel.values().row(0).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
        let kurt =
            row.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / (row.len() as f64 * var * var);
        assert!(kurt > 6.0, "expected heavy-tail kurtosis, got {kurt}");
    }

    #[test]
    fn elliptical_covariance_matches_target() {
        let mut spec = DgpSpec::elliptical(7.0, 7.0);
        spec.p = 4;
        spec.k = 2;
        spec.t = 100_000;
        let (panel, truth) = simulate_elliptical_dgp(&spec, 5).unwrap();
        let sample = panel.sample_covariance();
        let sigma_eps = toeplitz(4, 0.5);
        let implied = &truth.b * truth.b.transpose() + sigma_eps;
        let scale = max_abs(&implied).max(1.0);
        assert!(
            max_abs(&(sample - implied)) < 0.05 * scale,
            "covariance mismatch beyond LLN tolerance"
        );
    }

    #[test]
    fn pervasiveness_gap_decreases_in_rho() {
        let (_, truth_low) = simulate_pervasiveness_dgp(80, 60, 0.4, 1).unwrap();
        let (_, truth_high) = simulate_pervasiveness_dgp(80, 60, 0.9, 1).unwrap();
        let gap_low = truth_low.eigen_gap.unwrap();
        let gap_high = truth_high.eigen_gap.unwrap();
        assert!(
            gap_low > gap_high,
            "gap should shrink as rho grows: {gap_low} vs {gap_high}"
        );
        // diagonal-residual limit: at rho near 0 the gap is driven by the
        // loading spectrum alone and is larger still
        let (_, truth_diag) = simulate_pervasiveness_dgp(80, 60, 0.05, 1).unwrap();
        assert!(truth_diag.eigen_gap.unwrap() > gap_low);
    }

    #[test]
    fn error_norms_zero_at_truth() {
        let spec = DgpSpec::case1(7.0);
        let (_, truth) = simulate_factor_dgp(&spec, 21).unwrap();
        let rec = error_norms(&truth.theta, &truth, truth.mu_target, truth.sigma_target);
        assert!(rec.theta_spectral < 1e-10);
        assert!(rec.theta_l1 < 1e-10);
        assert!(rec.w_gmv_l1.unwrap() < 1e-8);
        assert!(rec.phi_gmv_rel.unwrap() < 1e-8);
    }

    #[test]
    fn error_norms_rank_one_perturbation() {
        let spec = DgpSpec::case1(7.0);
        let (_, truth) = simulate_factor_dgp(&spec, 22).unwrap();
        let c = 0.37;
        let mut theta_hat = truth.theta.clone();
        theta_hat[(0, 0)] += c;
        let rec = error_norms(&theta_hat, &truth, truth.mu_target, truth.sigma_target);
        assert!((rec.theta_spectral - c).abs() < 1e-10);
        assert!((rec.theta_l1 - c).abs() < 1e-10);
    }

    #[test]
    fn error_norms_operator_inequality() {
        let spec = DgpSpec::case1(7.0);
        let (_, truth) = simulate_factor_dgp(&spec, 23).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let p = spec.p;
        let noise = DMatrix::from_fn(p, p, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.01 * z
        });
        let theta_hat = &truth.theta + symmetrize(&noise);
        let rec = error_norms(&theta_hat, &truth, truth.mu_target, truth.sigma_target);
        assert!(rec.theta_spectral <= rec.theta_l1 + 1e-12);
    }

    #[test]
    fn experiment_deterministic_and_seed_sensitive() {
        let h = [7.0];
        let est = [Estimator::SampleInverse];
        let a = convergence_experiment(Case::Case1, &h, 2, &est, 77).unwrap();
        let b = convergence_experiment(Case::Case1, &h, 2, &est, 77).unwrap();
        let a_json = serde_json::to_string(&a.rows).unwrap();
        let b_json = serde_json::to_string(&b.rows).unwrap();
        assert_eq!(a_json, b_json);
        let c = convergence_experiment(Case::Case1, &h, 2, &est, 78).unwrap();
        let c_json = serde_json::to_string(&c.rows).unwrap();
        assert_ne!(a_json, c_json);
    }

    #[test]
    fn rate_overlay_uses_table() {
        let h = [7.0, 7.5];
        let est = [Estimator::Fgl];
        let table = convergence_experiment(Case::Case1, &h, 2, &est, 5).unwrap();
        let rates =
            theoretical_rate_overlay(Case::Case1, &h, &[RateCurve::ThetaSpectral], &table).unwrap();
        assert_eq!(rates.rows.len(), 4); // 2 h-values x 2 variants
        for row in &rates.rows {
            assert!(row.theory_log2.is_finite());
            assert!(row.empirical_log2.is_finite());
            assert!(row.mad >= 0.0);
        }
        // degenerate d_T = s_T: the l1 and phi curves share their argument,
        // so their theory columns coincide up to intercept by construction
        let l1 = theoretical_rate_overlay(Case::Case1, &h, &[RateCurve::ThetaL1], &table).unwrap();
        let phi = theoretical_rate_overlay(Case::Case1, &h, &[RateCurve::PhiGmv], &table).unwrap();
        for (a, b) in l1.rows.iter().zip(phi.rows.iter()) {
            assert!((a.theory_log2 - b.theory_log2).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_derivation_stable() {
        let a = derive_seed(1, &[2, 3]);
        let b = derive_seed(1, &[2, 3]);
        assert_eq!(a, b);
        assert_ne!(derive_seed(1, &[3, 2]), a);
        assert_ne!(derive_seed(2, &[2, 3]), a);
    }
}
