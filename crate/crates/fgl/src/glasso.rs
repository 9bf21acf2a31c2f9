//! Sparse precision estimation by block-coordinate graphical lasso, with
//! log-spaced penalty grids and BIC tuning.
//!
//! The solver keeps a working covariance `W` whose diagonal is pinned at
//! `diag(Sigma) + lambda`. Each block step solves an l1-penalized quadratic
//! program for one row/column by cyclical coordinate descent and writes the
//! solution back into `W`. Precision entries are recovered from `(W, beta)`
//! by the partitioned-inverse identities once the outer loop settles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_log_det, symmetrize};

/// Zero threshold used when counting support for the BIC.
pub const BIC_ZERO_TOL: f64 = 1e-10;

/// How the l1 penalty is applied to off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyWeighting {
    /// A single `lambda` on every off-diagonal entry (the solver's native form).
    Uniform,
    /// Per-edge penalty `lambda * sqrt(w_ii * w_jj)`, scaling by the working
    /// standard deviations.
    DiagonalWeighted,
}

/// Tuning knobs for the graphical-lasso solver and its penalty grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlassoConfig {
    /// Number of grid points `m`.
    pub grid_size: usize,
    /// Ratio of the smallest to the largest grid value, in `(0, 1)`.
    pub grid_floor_ratio: f64,
    /// Outer sweep limit before giving up.
    pub max_sweeps: usize,
    /// Outer convergence tolerance on the max absolute change of `W` per
    /// sweep, relative to the mean diagonal of `Sigma`.
    pub convergence_tol: f64,
    /// Coordinate-descent subgradient tolerance, relative to the same scale.
    pub cd_tol: f64,
    pub penalty_weighting: PenaltyWeighting,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            grid_floor_ratio: 0.01,
            max_sweeps: 200,
            convergence_tol: 1e-6,
            cd_tol: 1e-8,
            penalty_weighting: PenaltyWeighting::Uniform,
        }
    }
}

impl GlassoConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::InvalidArgument("grid_size must be >= 2".into()));
        }
        if !(self.grid_floor_ratio > 0.0 && self.grid_floor_ratio < 1.0) {
            return Err(Error::InvalidArgument(
                "grid_floor_ratio must lie in (0, 1)".into(),
            ));
        }
        if self.max_sweeps < 1 || self.convergence_tol <= 0.0 || self.cd_tol <= 0.0 {
            return Err(Error::InvalidArgument(
                "sweeps and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which estimator produced a precision matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Glasso,
    Fgl,
    RobustFgl,
    SampleInverse,
}

/// A symmetric positive-definite precision matrix with its provenance.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub theta: DMatrix<f64>,
    pub lambda: f64,
    pub bic: f64,
    pub sweeps_used: usize,
    pub method: Method,
}

/// Degree and support statistics of a precision matrix's off-diagonal graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    /// Per-vertex degree `d_j`.
    pub degrees: Vec<usize>,
    /// Maximum vertex degree `d(A)`.
    pub max_degree: usize,
    /// Total edge incidences `s(A) = sum_j d_j` (each edge counted twice).
    pub edge_count: usize,
    /// Undirected support as `(i, j)` pairs with `i < j`.
    pub support: Vec<(usize, usize)>,
}

/// Log-equispaced penalty grid from `floor_ratio * lambda_max` up to
/// `lambda_max`, the maximum off-diagonal modulus of `sigma`.
pub fn lambda_grid(sigma: &DMatrix<f64>, cfg: &GlassoConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let p = sigma.nrows();
    if p < 2 {
        return Err(Error::InvalidArgument("need at least 2 variables".into()));
    }
    let mut lambda_max = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                lambda_max = lambda_max.max(sigma[(i, j)].abs());
            }
        }
    }
    if lambda_max == 0.0 {
        return Err(Error::DegenerateGrid);
    }
    let m = cfg.grid_size;
    let lambda_min = cfg.grid_floor_ratio * lambda_max;
    let log_min = lambda_min.ln();
    let log_range = (lambda_max / lambda_min).ln();
    let mut grid = Vec::with_capacity(m);
    for i in 0..m {
        let frac = i as f64 / (m - 1) as f64;
        grid.push((log_min + frac * log_range).exp());
    }
    grid[0] = lambda_min;
    grid[m - 1] = lambda_max;
    Ok(grid)
}

/// Warm-startable solver state: the working covariance and the per-column
/// regression coefficients from the previous solve.
struct WorkState {
    w: DMatrix<f64>,
    beta: DMatrix<f64>,
}

impl WorkState {
    fn cold(sigma: &DMatrix<f64>, lambda: f64) -> Self {
        let p = sigma.nrows();
        let mut w = sigma.clone();
        for j in 0..p {
            w[(j, j)] = sigma[(j, j)] + lambda;
        }
        Self {
            w,
            beta: DMatrix::zeros(p, p),
        }
    }

    fn reset_diagonal(&mut self, sigma: &DMatrix<f64>, lambda: f64) {
        for j in 0..sigma.nrows() {
            self.w[(j, j)] = sigma[(j, j)] + lambda;
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// One cyclical-coordinate-descent solve of
/// `min 0.5 b' W11 b - b' s12 + sum_k pen_k |b_k|`
/// over the coordinates `k != j`, operating in place on `beta` (length `p`,
/// entry `j` ignored). `penalties[k]` is the l1 weight for coordinate `k`.
/// Returns the working product `q = W11 beta` (length `p`, entry `j` unused).
fn cd_solve_column(
    w: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    j: usize,
    beta: &mut DVector<f64>,
    penalties: &DVector<f64>,
    cd_tol_abs: f64,
) -> DVector<f64> {
    let p = w.nrows();
    let mut q: DVector<f64> = DVector::zeros(p);
    for l in 0..p {
        let b = beta[l];
        if l != j && b != 0.0 {
            for k in 0..p {
                q[k] += b * w[(k, l)];
            }
        }
    }
    // Far more passes than coordinate descent ever needs on a PD block; the
    // outer convergence check and KKT certificate catch anything pathological.
    const MAX_PASSES: usize = 100_000;
    for _ in 0..MAX_PASSES {
        for k in 0..p {
            if k == j {
                continue;
            }
            let wkk = w[(k, k)];
            let r = sigma[(k, j)] - q[k] + wkk * beta[k];
            let new = soft_threshold(r, penalties[k]) / wkk;
            let delta = new - beta[k];
            if delta != 0.0 {
                for i in 0..p {
                    q[i] += delta * w[(i, k)];
                }
                beta[k] = new;
            }
        }
        // Subgradient check on the full coordinate block.
        let mut worst = 0.0f64;
        for k in 0..p {
            if k == j {
                continue;
            }
            let grad = q[k] - sigma[(k, j)];
            let viol = if beta[k] != 0.0 {
                (grad + penalties[k] * beta[k].signum()).abs()
            } else {
                (grad.abs() - penalties[k]).max(0.0)
            };
            worst = worst.max(viol);
        }
        if worst <= cd_tol_abs {
            break;
        }
    }
    q
}

/// Solve the column-`j` subproblem against explicit inputs. Public form of
/// the inner step: uniform penalty `lambda`, warm start `beta0`, absolute
/// subgradient tolerance `cd_tol`.
pub fn lasso_cd(
    w11: &DMatrix<f64>,
    s12: &DVector<f64>,
    lambda: f64,
    beta0: &DVector<f64>,
    cd_tol: f64,
) -> Result<DVector<f64>> {
    let n = s12.len();
    if w11.nrows() != n || w11.ncols() != n || beta0.len() != n {
        return Err(Error::InvalidArgument(
            "lasso_cd: dimension mismatch".into(),
        ));
    }
    // Embed as column j = n of an (n+1)-sized system so the block solver
    // can be reused unchanged.
    let p = n + 1;
    let mut w = DMatrix::zeros(p, p);
    w.view_mut((0, 0), (n, n)).copy_from(w11);
    w[(n, n)] = 1.0;
    let mut sigma = DMatrix::zeros(p, p);
    for k in 0..n {
        sigma[(k, n)] = s12[k];
        sigma[(n, k)] = s12[k];
    }
    let mut beta = DVector::zeros(p);
    for k in 0..n {
        beta[k] = beta0[k];
    }
    let penalties = DVector::from_element(p, lambda);
    cd_solve_column(&w, &sigma, n, &mut beta, &penalties, cd_tol);
    Ok(beta.rows(0, n).into_owned())
}

fn column_penalties(
    w: &DMatrix<f64>,
    j: usize,
    lambda: f64,
    weighting: PenaltyWeighting,
) -> DVector<f64> {
    let p = w.nrows();
    match weighting {
        PenaltyWeighting::Uniform => DVector::from_element(p, lambda),
        PenaltyWeighting::DiagonalWeighted => {
            let dj = w[(j, j)].max(0.0).sqrt();
            DVector::from_iterator(p, (0..p).map(|k| lambda * dj * w[(k, k)].max(0.0).sqrt()))
        }
    }
}

/// Core solver loop over a warm state. Returns the recovered precision, the
/// sweeps used, and optionally records `log det W` after each sweep.
fn fit_with_state(
    sigma: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
    state: &mut WorkState,
    mut sweep_log_det: Option<&mut Vec<f64>>,
) -> Result<(DMatrix<f64>, usize)> {
    let p = sigma.nrows();
    let scale = (0..p).map(|i| sigma[(i, i)].abs()).sum::<f64>() / p as f64;
    let scale = scale.max(f64::MIN_POSITIVE);
    let outer_tol = cfg.convergence_tol * scale;
    let cd_tol_abs = cfg.cd_tol * scale;

    state.reset_diagonal(sigma, lambda);
    if p == 1 {
        let theta = DMatrix::from_element(1, 1, 1.0 / state.w[(0, 0)]);
        return Ok((theta, 0));
    }

    let mut sweeps = 0usize;
    let mut last_residual = f64::INFINITY;
    let mut outer_tol = outer_tol;
    // With an ill-conditioned working covariance, the precision recovered at
    // the nominal tolerance can lose positive definiteness (its smallest
    // eigenvalue is 1 / lambda_max(W)). When that happens, tighten the
    // tolerance and keep sweeping within the same sweep budget.
    let mut refinements_left = 3usize;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            let penalties = column_penalties(&state.w, j, lambda, cfg.penalty_weighting);
            let mut beta = state.beta.column(j).into_owned();
            beta[j] = 0.0;
            let q = cd_solve_column(&state.w, sigma, j, &mut beta, &penalties, cd_tol_abs);
            for k in 0..p {
                if k != j {
                    let delta = (q[k] - state.w[(k, j)]).abs();
                    max_change = max_change.max(delta);
                    state.w[(k, j)] = q[k];
                    state.w[(j, k)] = q[k];
                }
            }
            state.beta.set_column(j, &beta);
        }
        if let Some(log) = sweep_log_det.as_deref_mut() {
            log.push(spd_log_det(&state.w, "working covariance")?);
        }
        last_residual = max_change;
        if max_change <= outer_tol {
            match recover_precision(state) {
                Ok(theta) => return Ok((theta, sweeps)),
                Err(err) => {
                    if refinements_left == 0 {
                        return Err(err);
                    }
                    refinements_left -= 1;
                    outer_tol *= 1e-3;
                }
            }
        }
    }
    Err(Error::NotConverged {
        sweeps,
        residual: last_residual,
    })
}

/// Final cycle of the block algorithm: precision entries from `(W, beta)`
/// via the partitioned-inverse identities, symmetrized and checked SPD.
fn recover_precision(state: &WorkState) -> Result<DMatrix<f64>> {
    let p = state.w.nrows();
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let beta = state.beta.column(j);
        let mut cross = 0.0;
        for k in 0..p {
            if k != j {
                cross += beta[k] * state.w[(k, j)];
            }
        }
        let denom = state.w[(j, j)] - cross;
        if denom <= 0.0 {
            return Err(Error::NotPositiveDefinite(
                "graphical lasso recovery produced a non-positive pivot".into(),
            ));
        }
        let tjj = 1.0 / denom;
        theta[(j, j)] = tjj;
        for k in 0..p {
            if k != j {
                theta[(k, j)] = -tjj * beta[k];
            }
        }
    }
    let theta = symmetrize(&theta);
    if theta.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(
            "graphical lasso returned a non-PD precision".into(),
        ));
    }
    Ok(theta)
}

/// Graphical-lasso fit at a single penalty value.
///
/// `lambda = 0` is accepted only when `sigma` is already positive definite;
/// there is no silent ridge fallback. The returned estimate carries `NaN`
/// for the BIC; scoring requires a sample size (see [`select_lambda`] and
/// [`bic_score`]).
pub fn glasso_fit(
    sigma: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
) -> Result<PrecisionEstimate> {
    cfg.validate()?;
    validate_sigma(sigma, lambda)?;
    let mut state = WorkState::cold(sigma, lambda);
    let (theta, sweeps) = fit_with_state(sigma, lambda, cfg, &mut state, None)?;
    Ok(PrecisionEstimate {
        theta,
        lambda,
        bic: f64::NAN,
        sweeps_used: sweeps,
        method: Method::Glasso,
    })
}

/// Test-support variant recording `log det W` after each outer sweep.
#[doc(hidden)]
pub fn glasso_fit_sweep_log_dets(
    sigma: &DMatrix<f64>,
    lambda: f64,
    cfg: &GlassoConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    validate_sigma(sigma, lambda)?;
    let mut state = WorkState::cold(sigma, lambda);
    let mut log = Vec::new();
    fit_with_state(sigma, lambda, cfg, &mut state, Some(&mut log))?;
    Ok(log)
}

fn validate_sigma(sigma: &DMatrix<f64>, lambda: f64) -> Result<()> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::InvalidArgument("sigma must be square".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    for j in 0..sigma.nrows() {
        if sigma[(j, j)] <= 0.0 {
            return Err(Error::InvalidArgument(
                "sigma must have a strictly positive diagonal".into(),
            ));
        }
    }
    if lambda == 0.0 && sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(
            "lambda = 0 requires a positive-definite sigma".into(),
        ));
    }
    Ok(())
}

/// Bayesian information criterion for a fitted precision:
/// `T [trace(theta sigma) - log det theta] + ln(T) * #{(i,j): i <= j, theta_ij != 0}`,
/// with entries below [`BIC_ZERO_TOL`] in modulus treated as zero.
pub fn bic_score(theta: &DMatrix<f64>, sigma: &DMatrix<f64>, t: usize) -> Result<f64> {
    if theta.nrows() != sigma.nrows() || theta.ncols() != sigma.ncols() {
        return Err(Error::InvalidArgument(
            "bic_score: dimension mismatch".into(),
        ));
    }
    if t < 1 {
        return Err(Error::InvalidArgument(
            "bic_score: T must be positive".into(),
        ));
    }
    let log_det = spd_log_det(theta, "bic_score theta")?;
    let p = theta.nrows();
    let mut trace = 0.0;
    let mut support = 0usize;
    for i in 0..p {
        for j in 0..p {
            trace += theta[(i, j)] * sigma[(j, i)];
            if j >= i && theta[(i, j)].abs() > BIC_ZERO_TOL {
                support += 1;
            }
        }
    }
    let tf = t as f64;
    Ok(tf * (trace - log_det) + tf.ln() * support as f64)
}

/// Fit the whole penalty grid with warm starts (largest penalty first) and
/// return the BIC-minimizing estimate; ties break toward the sparser model.
pub fn select_lambda(
    sigma: &DMatrix<f64>,
    t: usize,
    cfg: &GlassoConfig,
) -> Result<PrecisionEstimate> {
    let grid = lambda_grid(sigma, cfg)?;
    let mut state = WorkState::cold(sigma, grid[grid.len() - 1]);
    let mut best: Option<PrecisionEstimate> = None;
    for &lambda in grid.iter().rev() {
        let (theta, sweeps) = fit_with_state(sigma, lambda, cfg, &mut state, None)?;
        let bic = bic_score(&theta, sigma, t)?;
        let better = match &best {
            None => true,
            Some(b) => bic < b.bic,
        };
        if better {
            best = Some(PrecisionEstimate {
                theta,
                lambda,
                bic,
                sweeps_used: sweeps,
                method: Method::Glasso,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Full BIC path: `(lambda, bic, edge_count)` for every grid point, in
/// ascending lambda order. Used for reporting.
pub fn bic_path(
    sigma: &DMatrix<f64>,
    t: usize,
    cfg: &GlassoConfig,
) -> Result<Vec<(f64, f64, usize)>> {
    let grid = lambda_grid(sigma, cfg)?;
    let mut state = WorkState::cold(sigma, grid[grid.len() - 1]);
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid.iter().rev() {
        let (theta, _) = fit_with_state(sigma, lambda, cfg, &mut state, None)?;
        let bic = bic_score(&theta, sigma, t)?;
        let stats = graph_stats(&theta, BIC_ZERO_TOL);
        path.push((lambda, bic, stats.edge_count));
    }
    path.reverse();
    Ok(path)
}

/// Degree statistics of the off-diagonal support, treating entries at or
/// below `zero_tol` in modulus as zero.
pub fn graph_stats(theta: &DMatrix<f64>, zero_tol: f64) -> GraphStats {
    let p = theta.nrows();
    let mut degrees = vec![0usize; p];
    let mut support = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if theta[(i, j)].abs() > zero_tol {
                degrees[i] += 1;
                degrees[j] += 1;
                support.push((i, j));
            }
        }
    }
    let max_degree = degrees.iter().copied().max().unwrap_or(0);
    let edge_count = degrees.iter().sum();
    GraphStats {
        degrees,
        max_degree,
        edge_count,
        support,
    }
}

/// Independent first-order certificate for a graphical-lasso solution.
///
/// Inverts `theta` densely (LU) and returns the largest violation of the
/// stationarity conditions: diagonal `(theta^-1)_jj = sigma_jj + lambda`,
/// off-diagonal subgradient bounds under the configured weighting.
pub fn kkt_residual(
    theta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    lambda: f64,
    weighting: PenaltyWeighting,
) -> f64 {
    let p = theta.nrows();
    let inv = theta
        .clone()
        .lu()
        .try_inverse()
        .expect("theta must be invertible for the KKT check");
    let mut worst = 0.0f64;
    for j in 0..p {
        let dj = (sigma[(j, j)] + lambda).max(0.0).sqrt();
        for i in 0..p {
            if i == j {
                worst = worst.max((sigma[(j, j)] + lambda - inv[(j, j)]).abs());
                continue;
            }
            let pen = match weighting {
                PenaltyWeighting::Uniform => lambda,
                PenaltyWeighting::DiagonalWeighted => {
                    let di = (sigma[(i, i)] + lambda).max(0.0).sqrt();
                    lambda * di * dj
                }
            };
            let grad = sigma[(i, j)] - inv[(i, j)];
            let viol = if theta[(i, j)].abs() > BIC_ZERO_TOL {
                (grad + pen * theta[(i, j)].signum()).abs()
            } else {
                (grad.abs() - pen).max(0.0)
            };
            worst = worst.max(viol);
        }
    }
    worst
}
