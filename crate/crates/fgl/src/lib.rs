//! Factor graphical lasso for portfolio construction.
//!
//! Estimates high-dimensional precision matrices of asset returns by
//! combining a principal-components factor stage with an l1-penalized
//! precision estimate of the idiosyncratic components, assembled through the
//! Sherman-Morrison-Woodbury identity. On top of the estimator sit optimal
//! portfolio weights (minimum-variance and two Markowitz formulations), a
//! rolling backtest engine with transaction costs, and Monte Carlo drivers
//! that measure convergence against the theoretical rates.

pub mod backtest;
pub mod cli;
pub mod error;
pub mod factor_model;
pub mod glasso;
pub mod io;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod portfolio;
pub mod robust;
pub mod simulate;

pub use error::{Error, Result};
pub use factor_model::{estimate_pca, fit_observed_factors, select_num_factors, FactorModelFit};
pub use glasso::{
    bic_score, glasso_fit, graph_stats, lambda_grid, lasso_cd, select_lambda, GlassoConfig,
    GraphStats, Method, PenaltyWeighting, PrecisionEstimate,
};
pub use panel::ReturnsPanel;
pub use pipeline::{
    estimate, fgl_combine, fgl_estimate, robust_fgl_estimate, FactorMode, FglOptions, Robust,
};
pub use portfolio::{
    exposure_scalars, gmv_weights, mrc_weights, mwc_weights, risk_exposure, squared_sharpe,
    ExposureScalars, Formulation, MomentInputs, PortfolioWeights,
};
pub use robust::{huber_scale, kendall_tau_correlation, spatial_kendall_eigvecs, RobustCovariance};
pub use simulate::{
    convergence_experiment, error_norms, random_graph_precision, simulate_elliptical_dgp,
    simulate_factor_dgp, simulate_pervasiveness_dgp, theoretical_rate_overlay, toeplitz_loadings,
    Case, DgpKind, DgpSpec, Estimator, GroundTruth,
};
