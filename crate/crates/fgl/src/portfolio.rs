//! Optimal portfolio weights and risk exposures from a precision matrix and
//! a mean vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Portfolio objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Global minimum variance: budget constraint only.
    Gmv,
    /// Weight-constrained mean-variance: budget plus a mean target.
    Mwc,
    /// Risk-constrained: mean target and risk budget, no budget constraint.
    Mrc,
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Formulation::Gmv => write!(f, "gmv"),
            Formulation::Mwc => write!(f, "mwc"),
            Formulation::Mrc => write!(f, "mrc"),
        }
    }
}

/// Precision matrix and mean vector feeding the weight formulas.
#[derive(Debug, Clone)]
pub struct MomentInputs {
    theta: DMatrix<f64>,
    m: DVector<f64>,
}

impl MomentInputs {
    /// Validates shape and positive definiteness of `theta`.
    pub fn new(theta: DMatrix<f64>, m: DVector<f64>) -> Result<Self> {
        if theta.nrows() != theta.ncols() || theta.nrows() != m.len() {
            return Err(Error::InvalidArgument(
                "theta must be square and match the mean vector".into(),
            ));
        }
        if theta.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("moment inputs".into()));
        }
        Ok(Self { theta, m })
    }

    /// Skip the positive-definiteness check. For pseudo-inverse precision
    /// estimates, which are only positive semi-definite; the weight formulas
    /// remain well defined as long as the relevant quadratic forms are
    /// nonzero.
    pub fn new_unchecked(theta: DMatrix<f64>, m: DVector<f64>) -> Self {
        Self { theta, m }
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Portfolio weights tagged with their formulation and targets.
#[derive(Debug, Clone)]
pub struct PortfolioWeights {
    pub w: DVector<f64>,
    pub formulation: Formulation,
    /// Per-period return target (MWC); 0 where not applicable.
    pub mu_target: f64,
    /// Per-period risk target (MRC); 0 where not applicable.
    pub sigma_target: f64,
}

/// The scalar risk-exposure building blocks
/// `a = i'Ti/p`, `b = i'Tm/p`, `d = m'Tm/p`, `g = sqrt(m'Tm)/p`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExposureScalars {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub g: f64,
}

/// Relative tolerance for declaring the frontier degenerate.
const FRONTIER_TOL: f64 = 1e-12;

fn theta_times_ones(theta: &DMatrix<f64>) -> DVector<f64> {
    let p = theta.nrows();
    DVector::from_iterator(p, (0..p).map(|i| theta.row(i).sum()))
}

/// `a d - b^2 > tol * max(1, a d)`, the non-degenerate-frontier condition.
fn frontier_gap(scalars: &ExposureScalars) -> f64 {
    scalars.a * scalars.d - scalars.b * scalars.b
}

fn frontier_is_degenerate(scalars: &ExposureScalars) -> bool {
    frontier_gap(scalars) <= FRONTIER_TOL * (scalars.a * scalars.d).abs().max(1.0)
}

/// Global minimum-variance weights `w = (i'Ti)^-1 Ti`.
pub fn gmv_weights(inp: &MomentInputs) -> Result<PortfolioWeights> {
    let ti = theta_times_ones(inp.theta());
    let denom = ti.sum();
    if denom <= 0.0 {
        return Err(Error::DegenerateDenominator("i'Ti".into()));
    }
    Ok(PortfolioWeights {
        w: ti / denom,
        formulation: Formulation::Gmv,
        mu_target: 0.0,
        sigma_target: 0.0,
    })
}

/// Weight-constrained Markowitz weights by two-fund separation:
/// `w = (1 - a1) w_GMV + a1 w_M` with the mean target `mu`.
pub fn mwc_weights(inp: &MomentInputs, mu: f64) -> Result<PortfolioWeights> {
    let p = inp.dim() as f64;
    let scalars = exposure_scalars(inp);
    if frontier_is_degenerate(&scalars) {
        return Err(Error::DegenerateFrontier);
    }
    let tm = inp.theta() * inp.mean();
    let itm = tm.sum();
    if itm == 0.0 {
        return Err(Error::MeanOrthogonalToFrontier);
    }
    let gmv = gmv_weights(inp)?;
    let w_m = &tm / itm;
    // a1 in terms of the unscaled quadratic forms.
    let a_raw = scalars.a * p;
    let b_raw = scalars.b * p;
    let d_raw = scalars.d * p;
    let a1 = (mu * b_raw * a_raw - b_raw * b_raw) / (d_raw * a_raw - b_raw * b_raw);
    let w = (1.0 - a1) * &gmv.w + a1 * w_m;
    Ok(PortfolioWeights {
        w,
        formulation: Formulation::Mwc,
        mu_target: mu,
        sigma_target: 0.0,
    })
}

/// Risk-constrained weights `w = (sigma / sqrt(m'Tm)) Tm`.
pub fn mrc_weights(inp: &MomentInputs, sigma: f64) -> Result<PortfolioWeights> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
    }
    let theta_sq = squared_sharpe(inp);
    if theta_sq <= 0.0 {
        return Err(Error::ZeroMeanVector);
    }
    let tm = inp.theta() * inp.mean();
    Ok(PortfolioWeights {
        w: (sigma / theta_sq.sqrt()) * tm,
        formulation: Formulation::Mrc,
        mu_target: 0.0,
        sigma_target: sigma,
    })
}

/// The scalars `(a, b, d, g)` of the plug-in exposure formulas.
pub fn exposure_scalars(inp: &MomentInputs) -> ExposureScalars {
    let p = inp.dim() as f64;
    let ti = theta_times_ones(inp.theta());
    let tm = inp.theta() * inp.mean();
    let a = ti.sum() / p;
    let b = ti.dot(inp.mean()) / p;
    let d = inp.mean().dot(&tm) / p;
    let g = d.max(0.0).sqrt() * (p.sqrt() / p); // sqrt(m'Tm)/p
    ExposureScalars { a, b, d, g }
}

/// Plug-in risk exposure for the chosen formulation:
/// GMV `(pa)^-1`; MWC `p^-1 (a mu^2 - 2 b mu + d)/(ad - b^2)`; MRC
/// `sigma^2 (p g)` as the plug-in convention writes it (which equals
/// `sigma^2 sqrt(m'Tm)`). The realized quadratic form for MRC is exposed
/// separately by [`realized_variance`].
pub fn risk_exposure(
    inp: &MomentInputs,
    formulation: Formulation,
    mu: f64,
    sigma: f64,
) -> Result<f64> {
    let p = inp.dim() as f64;
    let s = exposure_scalars(inp);
    match formulation {
        Formulation::Gmv => {
            if s.a <= 0.0 {
                return Err(Error::DegenerateDenominator("i'Ti".into()));
            }
            Ok(1.0 / (p * s.a))
        }
        Formulation::Mwc => {
            if frontier_is_degenerate(&s) {
                return Err(Error::DegenerateFrontier);
            }
            Ok((s.a * mu * mu - 2.0 * s.b * mu + s.d) / (p * frontier_gap(&s)))
        }
        Formulation::Mrc => Ok(sigma * sigma * (p * s.g)),
    }
}

/// Realized portfolio variance `w' T^-1 w` evaluated by an SPD solve.
pub fn realized_variance(inp: &MomentInputs, w: &DVector<f64>) -> Result<f64> {
    let chol = inp
        .theta()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("realized_variance".into()))?;
    let x = chol.solve(w);
    Ok(w.dot(&x))
}

/// Squared Sharpe ratio `m'Tm`.
pub fn squared_sharpe(inp: &MomentInputs) -> f64 {
    inp.mean().dot(&(inp.theta() * inp.mean()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_inputs(p: usize, seed: u64) -> MomentInputs {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
        let mut theta: DMatrix<f64> = &a * a.transpose() / p as f64;
        for i in 0..p {
            theta[(i, i)] += 0.5;
        }
        let m = DVector::from_fn(p, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.05 + 0.02 * z
        });
        MomentInputs::new(theta, m).unwrap()
    }

    /// Equality-constrained QP oracle: minimize w'Sw subject to C w = b via
    /// the KKT linear system, with S = theta^-1.
    fn constrained_qp_oracle(
        inp: &MomentInputs,
        constraints: &[(DVector<f64>, f64)],
    ) -> DVector<f64> {
        let p = inp.dim();
        let sigma = inp.theta().clone().lu().try_inverse().unwrap();
        let k = constraints.len();
        let n = p + k;
        let mut kkt = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        kkt.view_mut((0, 0), (p, p)).copy_from(&(2.0 * &sigma));
        for (ci, (c, b)) in constraints.iter().enumerate() {
            for i in 0..p {
                kkt[(i, p + ci)] = c[i];
                kkt[(p + ci, i)] = c[i];
            }
            rhs[p + ci] = *b;
        }
        let sol = kkt.lu().solve(&rhs).unwrap();
        sol.rows(0, p).into_owned()
    }

    #[test]
    fn gmv_identity_theta() {
        let inp = MomentInputs::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let w = gmv_weights(&inp).unwrap();
        for v in w.w.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gmv_diagonal_theta() {
        let theta = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let inp = MomentInputs::new(theta, DVector::zeros(2)).unwrap();
        let w = gmv_weights(&inp).unwrap();
        assert!((w.w[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.w[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gmv_matches_qp_oracle() {
        let inp = random_inputs(6, 1);
        let w = gmv_weights(&inp).unwrap();
        let ones = DVector::from_element(6, 1.0);
        let oracle = constrained_qp_oracle(&inp, &[(ones, 1.0)]);
        assert!((w.w - oracle).amax() < 1e-6);
    }

    #[test]
    fn gmv_budget_and_scaling() {
        let inp = random_inputs(5, 2);
        let w = gmv_weights(&inp).unwrap();
        assert!((w.w.sum() - 1.0).abs() < 1e-10);
        // scaling theta by a power of two leaves weights bit-identical
        let scaled = MomentInputs::new(2.0 * inp.theta().clone(), inp.mean().clone()).unwrap();
        let w2 = gmv_weights(&scaled).unwrap();
        assert_eq!(w.w, w2.w);
    }

    #[test]
    fn gmv_optimal_among_feasible_perturbations() {
        let inp = random_inputs(5, 3);
        let w = gmv_weights(&inp).unwrap();
        let base = realized_variance(&inp, &w.w).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let mut delta = DVector::from_fn(5, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.05 * z
            });
            let shift = delta.sum() / 5.0;
            for v in delta.iter_mut() {
                *v -= shift; // keep i'delta = 0
            }
            let perturbed = &w.w + delta;
            let var = realized_variance(&inp, &perturbed).unwrap();
            assert!(var >= base - 1e-10);
        }
    }

    #[test]
    fn mwc_collinear_mean_is_degenerate() {
        let inp =
            MomentInputs::new(DMatrix::identity(3, 3), DVector::from_element(3, 0.07)).unwrap();
        match mwc_weights(&inp, 0.07) {
            Err(Error::DegenerateFrontier) => {}
            other => panic!("expected DegenerateFrontier, got {other:?}"),
        }
    }

    #[test]
    fn mwc_two_asset_symmetric() {
        let inp =
            MomentInputs::new(DMatrix::identity(2, 2), DVector::from_vec(vec![0.1, 0.2])).unwrap();
        let w = mwc_weights(&inp, 0.15).unwrap();
        assert!((w.w[0] - 0.5).abs() < 1e-12);
        assert!((w.w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mwc_constraints_and_qp_oracle() {
        let inp = random_inputs(5, 4);
        let s = exposure_scalars(&inp);
        let mu = 1.1 * (s.b / s.a);
        let w = mwc_weights(&inp, mu).unwrap();
        assert!((w.w.sum() - 1.0).abs() < 1e-8);
        assert!((inp.mean().dot(&w.w) - mu).abs() < 1e-8);
        let ones = DVector::from_element(5, 1.0);
        let oracle = constrained_qp_oracle(&inp, &[(ones, 1.0), (inp.mean().clone(), mu)]);
        assert!((w.w - oracle).amax() < 1e-6);
    }

    #[test]
    fn mwc_two_fund_separation_identity() {
        let inp = random_inputs(7, 5);
        let s = exposure_scalars(&inp);
        let mu = 1.1 * (s.b / s.a);
        let w = mwc_weights(&inp, mu).unwrap();
        let gmv = gmv_weights(&inp).unwrap();
        let tm = inp.theta() * inp.mean();
        let w_m = &tm / tm.sum();
        let p = 7.0;
        let (a, b, d) = (s.a * p, s.b * p, s.d * p);
        let a1 = (mu * b * a - b * b) / (d * a - b * b);
        let combo = (1.0 - a1) * &gmv.w + a1 * w_m;
        assert!((w.w - combo).amax() < 1e-12);
    }

    #[test]
    fn mrc_identity_theta_unit_mean() {
        let p = 4;
        let inp =
            MomentInputs::new(DMatrix::identity(p, p), DVector::from_element(p, 1.0)).unwrap();
        let sigma = 0.013;
        let w = mrc_weights(&inp, sigma).unwrap();
        let expect = sigma / (p as f64).sqrt();
        for v in w.w.iter() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn mrc_risk_identity_and_proportionality() {
        let inp = random_inputs(5, 6);
        let sigma = 0.02;
        let w = mrc_weights(&inp, sigma).unwrap();
        let var = realized_variance(&inp, &w.w).unwrap();
        assert!((var - sigma * sigma).abs() < 1e-8);
        // proportional to theta * m entrywise
        let tm = inp.theta() * inp.mean();
        let scale = sigma / squared_sharpe(&inp).sqrt();
        for i in 0..5 {
            assert!((w.w[i] - scale * tm[i]).abs() < 1e-12);
        }
        // mean target identity m'w = sigma * sqrt(theta)
        let theta_sq = squared_sharpe(&inp);
        assert!((inp.mean().dot(&w.w) - sigma * theta_sq.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn mrc_zero_mean_errors() {
        let inp = MomentInputs::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        match mrc_weights(&inp, 0.01) {
            Err(Error::ZeroMeanVector) => {}
            other => panic!("expected ZeroMeanVector, got {other:?}"),
        }
    }

    #[test]
    fn exposure_scalar_cases() {
        let inp =
            MomentInputs::new(DMatrix::identity(2, 2), DVector::from_element(2, 1.0)).unwrap();
        let s = exposure_scalars(&inp);
        assert!((s.a - 1.0).abs() < 1e-15);
        assert!((s.b - 1.0).abs() < 1e-15);
        assert!((s.d - 1.0).abs() < 1e-15);
        assert!((s.g - 2.0f64.sqrt() / 2.0).abs() < 1e-15);

        let zero_mean = MomentInputs::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let s0 = exposure_scalars(&zero_mean);
        assert_eq!(s0.b, 0.0);
        assert_eq!(s0.d, 0.0);
        assert_eq!(s0.g, 0.0);
    }

    #[test]
    fn exposure_scalar_identity_g2_d_over_p() {
        let inp = random_inputs(6, 7);
        let s = exposure_scalars(&inp);
        assert!((s.g * s.g - s.d / 6.0).abs() < 1e-12);
        // Cauchy-Schwarz
        assert!(s.a * s.d - s.b * s.b >= -1e-12);
    }

    #[test]
    fn risk_exposure_gmv() {
        let p = 5;
        let inp =
            MomentInputs::new(DMatrix::identity(p, p), DVector::from_element(p, 0.1)).unwrap();
        let phi = risk_exposure(&inp, Formulation::Gmv, 0.0, 0.0).unwrap();
        assert!((phi - 1.0 / p as f64).abs() < 1e-15);
        // matches w' Sigma w evaluated directly
        let w = gmv_weights(&inp).unwrap();
        let direct = realized_variance(&inp, &w.w).unwrap();
        assert!((phi - direct).abs() < 1e-8);
    }

    #[test]
    fn risk_exposure_mwc_closed_form() {
        let inp =
            MomentInputs::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let phi = risk_exposure(&inp, Formulation::Mwc, 0.5, 0.0).unwrap();
        assert!((phi - 0.5).abs() < 1e-12);
        // direct quadratic form agrees
        let w = mwc_weights(&inp, 0.5).unwrap();
        let direct = realized_variance(&inp, &w.w).unwrap();
        assert!((phi - direct).abs() < 1e-10);
    }

    #[test]
    fn risk_exposure_mrc_both_conventions() {
        let inp = random_inputs(5, 8);
        let sigma = 0.013;
        let phi_plugin = risk_exposure(&inp, Formulation::Mrc, 0.0, sigma).unwrap();
        let s = exposure_scalars(&inp);
        assert!((phi_plugin - sigma * sigma * 5.0 * s.g).abs() < 1e-14);
        // the direct quadratic form is exactly sigma^2
        let w = mrc_weights(&inp, sigma).unwrap();
        let direct = realized_variance(&inp, &w.w).unwrap();
        assert!((direct - sigma * sigma).abs() < 1e-10);
    }

    #[test]
    fn squared_sharpe_cases() {
        let zero = MomentInputs::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(squared_sharpe(&zero), 0.0);
        let inp =
            MomentInputs::new(DMatrix::identity(2, 2), DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((squared_sharpe(&inp) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn squared_sharpe_matches_cholesky_oracle() {
        let inp = random_inputs(6, 9);
        let chol = inp.theta().clone().cholesky().unwrap();
        let y = chol.l().transpose() * inp.mean();
        let oracle: f64 = y.iter().map(|v| v * v).sum();
        assert!((squared_sharpe(&inp) - oracle).abs() < 1e-12);
    }
}
