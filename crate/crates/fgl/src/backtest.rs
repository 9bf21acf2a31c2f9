//! Rolling-window out-of-sample evaluation with proportional transaction
//! costs.
//!
//! Timeline convention: after observing period `t`, a rebalance scheduled at
//! that instant trades from the drifted holdings to the new target weights;
//! the cost of that trade is charged against the following period's return.
//! The very first position is charged as a trade from the zero portfolio.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{select_lambda, Method, PrecisionEstimate};
use crate::linalg::symmetric_pinv;
use crate::panel::ReturnsPanel;
use crate::pipeline::{estimate, FglOptions, Robust};
use crate::portfolio::{gmv_weights, mrc_weights, mwc_weights, Formulation, MomentInputs};

/// Which estimator drives the portfolio at each rebalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fgl,
    RobustFgl,
    Gl,
    SampleInverse,
    EqualWeight,
    IndexPassthrough,
}

/// Backtest settings.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// Observations per estimation window.
    pub train_length: usize,
    /// Periods between re-estimations.
    pub rebalance_every: usize,
    /// Proportional cost rate per unit of l1 trade (0.0050 = 50 bps).
    pub tc: f64,
    pub mu_target: f64,
    pub sigma_target: f64,
    pub formulation: Formulation,
    pub strategy: Strategy,
    /// Minimum observations an asset must have to enter the universe.
    pub min_history: usize,
    /// Factor/glasso options for the model-based strategies.
    pub fgl_options: FglOptions,
    /// Asset held by the index-passthrough strategy.
    pub index_asset: Option<String>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            train_length: 252,
            rebalance_every: 21,
            tc: 0.0050,
            mu_target: 0.000378,
            sigma_target: 0.013,
            formulation: Formulation::Gmv,
            strategy: Strategy::Fgl,
            min_history: 2,
            fgl_options: FglOptions::default(),
            index_asset: None,
        }
    }
}

/// Compounded net return and realized risk over a labeled slice of the test
/// period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CerWindow {
    pub label: String,
    pub cer: f64,
    pub risk: f64,
}

/// Summary statistics over the test sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub mu_test: f64,
    pub sigma_test: f64,
    /// `None` when the realized volatility is zero.
    pub sharpe: Option<f64>,
    pub mu_test_tc: f64,
    pub sigma_test_tc: f64,
    pub sharpe_tc: Option<f64>,
    pub turnover: f64,
}

/// Per-period results plus summary metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub gross_returns: Vec<f64>,
    pub net_returns: Vec<f64>,
    /// Per-period l1 trade sizes (zero between rebalances).
    pub trades: Vec<f64>,
    pub summary: SummaryMetrics,
    pub cer_windows: Vec<CerWindow>,
    /// Labels of the test periods, aligned with the return vectors.
    pub period_labels: Vec<String>,
}

/// Return-drift update: each weight grows with its asset's total return
/// relative to the portfolio's total return.
pub fn drift_weights(
    w: &DVector<f64>,
    r_next: &DVector<f64>,
    rf_next: f64,
    r_portfolio_next: f64,
) -> Result<DVector<f64>> {
    if w.len() != r_next.len() {
        return Err(Error::InvalidArgument(
            "drift_weights: dimension mismatch".into(),
        ));
    }
    let denom = 1.0 + r_portfolio_next + rf_next;
    if denom == 0.0 {
        return Err(Error::PortfolioWipedOut);
    }
    Ok(DVector::from_iterator(
        w.len(),
        w.iter()
            .zip(r_next.iter())
            .map(|(wj, rj)| wj * (1.0 + rj + rf_next) / denom),
    ))
}

/// Net return after charging the proportional cost of the executed trade.
pub fn net_return(w_new: &DVector<f64>, w_drifted: &DVector<f64>, gross: f64, tc: f64) -> f64 {
    let trade: f64 = w_new
        .iter()
        .zip(w_drifted.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    gross - tc * (1.0 + gross) * trade
}

/// Sample moments of the gross and net return series, plus average turnover.
pub fn summarize(gross: &[f64], net: &[f64], trades: &[f64]) -> SummaryMetrics {
    let (mu_test, sigma_test) = mean_and_std(gross);
    let (mu_test_tc, sigma_test_tc) = mean_and_std(net);
    let turnover = if trades.is_empty() {
        0.0
    } else {
        trades.iter().sum::<f64>() / trades.len() as f64
    };
    SummaryMetrics {
        mu_test,
        sigma_test,
        sharpe: ratio_or_none(mu_test, sigma_test),
        mu_test_tc,
        sigma_test_tc,
        sharpe_tc: ratio_or_none(mu_test_tc, sigma_test_tc),
        turnover,
    }
}

fn mean_and_std(series: &[f64]) -> (f64, f64) {
    let n = series.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = series.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

fn ratio_or_none(mu: f64, sigma: f64) -> Option<f64> {
    if sigma == 0.0 {
        None
    } else {
        Some(mu / sigma)
    }
}

/// Compounded return `prod(1 + r_t) - 1` over an index range of the series.
pub fn cumulative_excess_return(returns: &[f64], range: std::ops::Range<usize>) -> Result<f64> {
    if range.is_empty() || range.end > returns.len() {
        return Err(Error::InvalidArgument(
            "cumulative_excess_return: empty or out-of-range window".into(),
        ));
    }
    let mut acc = 1.0;
    for &r in &returns[range] {
        if r <= -1.0 {
            return Err(Error::BankruptcyInWindow);
        }
        acc *= 1.0 + r;
    }
    Ok(acc - 1.0)
}

fn target_weights(window: &ReturnsPanel, cfg: &BacktestConfig) -> Result<DVector<f64>> {
    let p = window.num_assets();
    match cfg.strategy {
        Strategy::EqualWeight => Ok(DVector::from_element(p, 1.0 / p as f64)),
        Strategy::IndexPassthrough => {
            let label = cfg
                .index_asset
                .as_ref()
                .ok_or_else(|| Error::Config("index_passthrough requires index_asset".into()))?;
            let idx = window
                .asset_labels()
                .iter()
                .position(|a| a == label)
                .ok_or_else(|| Error::Config(format!("index asset '{label}' not found")))?;
            let mut w = DVector::zeros(p);
            w[idx] = 1.0;
            Ok(w)
        }
        Strategy::Fgl | Strategy::RobustFgl => {
            let mut opts = cfg.fgl_options.clone();
            opts.robust = if cfg.strategy == Strategy::RobustFgl {
                Robust::Elliptical
            } else {
                Robust::None
            };
            let (est, fit) = estimate(window, &opts)?;
            let inp = MomentInputs::new(est.theta, fit.asset_means)?;
            weights_for(&inp, cfg)
        }
        Strategy::Gl => {
            let sigma = window.sample_covariance();
            let est = select_lambda(&sigma, window.num_periods(), &cfg.fgl_options.glasso_cfg)?;
            let inp = MomentInputs::new(est.theta, window.asset_means())?;
            weights_for(&inp, cfg)
        }
        Strategy::SampleInverse => {
            let est = sample_inverse_estimate(window);
            let inp = MomentInputs::new_unchecked(est.theta, window.asset_means());
            weights_for(&inp, cfg)
        }
    }
}

/// Pseudo-inverse of the window sample covariance, tagged as such. Exact
/// inverse whenever the covariance is nonsingular.
pub fn sample_inverse_estimate(window: &ReturnsPanel) -> PrecisionEstimate {
    let sigma = window.sample_covariance();
    let theta = symmetric_pinv(&sigma, 1e-10);
    PrecisionEstimate {
        theta,
        lambda: 0.0,
        bic: f64::NAN,
        sweeps_used: 0,
        method: Method::SampleInverse,
    }
}

fn weights_for(inp: &MomentInputs, cfg: &BacktestConfig) -> Result<DVector<f64>> {
    let w = match cfg.formulation {
        Formulation::Gmv => gmv_weights(inp)?,
        Formulation::Mwc => mwc_weights(inp, cfg.mu_target)?,
        Formulation::Mrc => mrc_weights(inp, cfg.sigma_target)?,
    };
    Ok(w.w)
}

/// Run the rolling backtest. `riskfree` must align with the panel's periods;
/// it enters only the drift and cost accounting (returns are already excess).
pub fn run_backtest(
    panel: &ReturnsPanel,
    riskfree: &[f64],
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    let t = panel.num_periods();
    let m = cfg.train_length;
    if m < 2 || m >= t {
        return Err(Error::InvalidArgument(format!(
            "train_length {m} must satisfy 2 <= m < T = {t}"
        )));
    }
    if riskfree.len() != t {
        return Err(Error::InvalidArgument(format!(
            "risk-free series has {} periods, panel has {t}",
            riskfree.len()
        )));
    }
    if cfg.rebalance_every < 1 {
        return Err(Error::InvalidArgument(
            "rebalance_every must be >= 1".into(),
        ));
    }
    if cfg.min_history > m {
        return Err(Error::InvalidArgument(
            "min_history cannot exceed the training length".into(),
        ));
    }

    let p = panel.num_assets();
    let n = t - m;
    let mut gross_returns = Vec::with_capacity(n);
    let mut net_returns = Vec::with_capacity(n);
    let mut trades = Vec::with_capacity(n);

    // Holdings after the trade at the previous instant.
    let mut holdings = DVector::zeros(p);

    for instant in (m - 1)..(t - 1) {
        let steps_since_first = instant - (m - 1);
        // Trade executed at this instant, charged to the next period.
        let pending_trade = if steps_since_first % cfg.rebalance_every == 0 {
            let window = panel.window(instant + 1 - m, m)?;
            let target = target_weights(&window, cfg).map_err(|e| Error::WindowFailed {
                window_end: instant,
                source: Box::new(e),
            })?;
            let trade = (&target - &holdings).abs().sum();
            holdings = target;
            trade
        } else {
            0.0
        };
        let next = instant + 1;
        let r_next = panel.values().column(next).into_owned();
        let gross = holdings.dot(&r_next);
        let net = gross - cfg.tc * (1.0 + gross) * pending_trade;
        gross_returns.push(gross);
        net_returns.push(net);
        trades.push(pending_trade);
        holdings = drift_weights(&holdings, &r_next, riskfree[next], gross)?;
    }

    let summary = summarize(&gross_returns, &net_returns, &trades);
    let test_labels: Vec<String> = panel.period_labels()[m..].to_vec();
    let cer_windows = build_cer_windows(&net_returns, &test_labels)?;
    Ok(BacktestReport {
        gross_returns,
        net_returns,
        trades,
        summary,
        cer_windows,
        period_labels: test_labels,
    })
}

/// One window covering the whole test sample, plus per-prefix windows when
/// the period labels carry a 4-character (year-like) prefix.
fn build_cer_windows(net: &[f64], labels: &[String]) -> Result<Vec<CerWindow>> {
    let mut windows = vec![window_stats("all", net, 0..net.len())?];
    if labels.iter().all(|l| l.len() >= 4) {
        let mut start = 0usize;
        while start < labels.len() {
            let prefix = &labels[start][..4];
            let mut end = start + 1;
            while end < labels.len() && &labels[end][..4] == prefix {
                end += 1;
            }
            if (start, end) != (0, labels.len()) {
                windows.push(window_stats(prefix, net, start..end)?);
            }
            start = end;
        }
    }
    Ok(windows)
}

fn window_stats(label: &str, net: &[f64], range: std::ops::Range<usize>) -> Result<CerWindow> {
    let cer = cumulative_excess_return(net, range.clone())?;
    let (_, risk) = mean_and_std(&net[range]);
    Ok(CerWindow {
        label: label.to_string(),
        cer,
        risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn two_asset_panel() -> ReturnsPanel {
        // assets x periods
        let values = DMatrix::from_row_slice(
            2,
            5,
            &[
                0.00, 0.01, 0.02, -0.01, 0.03, //
                0.00, -0.02, 0.01, 0.02, 0.00,
            ],
        );
        ReturnsPanel::from_values(values).unwrap()
    }

    #[test]
    fn drift_identities() {
        let w = DVector::from_vec(vec![0.6, 0.4]);
        let zero = DVector::zeros(2);
        let drifted = drift_weights(&w, &zero, 0.0, 0.0).unwrap();
        assert_eq!(drifted, w);

        // full investment keeps the drifted weights summing to one
        let r = DVector::from_vec(vec![0.1, -0.05]);
        let gross = w.dot(&r);
        let drifted = drift_weights(&w, &r, 0.002, gross + 0.0).unwrap();
        // denominator uses the portfolio return; with rf on both sides the
        // sum stays 1 only when rf enters numerator and denominator alike
        let manual: f64 = (0..2)
            .map(|j| w[j] * (1.0 + r[j] + 0.002) / (1.0 + gross + 0.002))
            .sum();
        assert!((drifted.sum() - manual).abs() < 1e-15);

        let single = DVector::from_vec(vec![1.0, 0.0]);
        let r = DVector::from_vec(vec![0.1, -0.1]);
        let gross = single.dot(&r);
        let drifted = drift_weights(&single, &r, 0.0, gross).unwrap();
        assert!((drifted[0] - 1.0).abs() < 1e-15);
        assert_eq!(drifted[1], 0.0);
    }

    #[test]
    fn drift_zero_denominator_errors() {
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let r = DVector::from_vec(vec![-1.0, 0.0]);
        match drift_weights(&w, &r, 0.0, -1.0) {
            Err(Error::PortfolioWipedOut) => {}
            other => panic!("expected PortfolioWipedOut, got {other:?}"),
        }
    }

    #[test]
    fn net_return_cases() {
        let w = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(net_return(&w, &w, 0.01, 0.005), 0.01);
        let drifted = DVector::from_vec(vec![0.6, 0.4]);
        let net = net_return(&w, &drifted, 0.0, 0.005);
        assert!((net - (-0.001)).abs() < 1e-15);
        // liquidation into the opposite portfolio trades 2 * ||w||_1
        let opposite = DVector::from_vec(vec![-0.5, -0.5]);
        let net = net_return(&opposite, &w, 0.0, 0.01);
        assert!((net - (-0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn summarize_cases() {
        let constant = vec![0.02; 5];
        let s = summarize(&constant, &constant, &[0.0; 5]);
        assert_eq!(s.sharpe, None);
        assert_eq!(s.sharpe_tc, None);

        let pair = vec![0.01, -0.01];
        let s = summarize(&pair, &pair, &[0.0, 0.0]);
        assert!(s.mu_test.abs() < 1e-18);
        assert!((s.sigma_test - 0.01 * 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.sharpe.map(|x| x == 0.0), Some(true));
    }

    #[test]
    fn summarize_matches_two_pass_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let series: Vec<f64> = (0..300)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.01 * z
            })
            .collect();
        let s = summarize(&series, &series, &series);
        // independent two-pass reference with a different summation order
        let mut mean = 0.0;
        for r in series.iter().rev() {
            mean += r;
        }
        mean /= 300.0;
        let mut var = 0.0;
        for r in series.iter().rev() {
            var += (r - mean) * (r - mean);
        }
        var /= 299.0;
        assert!((s.mu_test - mean).abs() < 1e-14);
        assert!((s.sigma_test - var.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cer_cases() {
        assert_eq!(cumulative_excess_return(&[0.0, 0.0], 0..2).unwrap(), 0.0);
        let two = cumulative_excess_return(&[0.1, 0.1], 0..2).unwrap();
        assert!((two - 0.21).abs() < 1e-15);
        let mixed = cumulative_excess_return(&[0.1, -0.1], 0..2).unwrap();
        assert!((mixed - (-0.01)).abs() < 1e-15);
        match cumulative_excess_return(&[-1.0], 0..1) {
            Err(Error::BankruptcyInWindow) => {}
            other => panic!("expected BankruptcyInWindow, got {other:?}"),
        }
    }

    #[test]
    fn equal_weight_gross_is_cross_sectional_mean() {
        let panel = two_asset_panel();
        let cfg = BacktestConfig {
            train_length: 2,
            rebalance_every: 1,
            tc: 0.0,
            strategy: Strategy::EqualWeight,
            ..BacktestConfig::default()
        };
        let report = run_backtest(&panel, &[0.0; 5], &cfg).unwrap();
        let values = panel.values();
        for (i, period) in (2..5).enumerate() {
            let mean = (values[(0, period)] + values[(1, period)]) / 2.0;
            assert!((report.gross_returns[i] - mean).abs() < 1e-15);
            assert_eq!(report.gross_returns[i], report.net_returns[i]);
        }
    }

    #[test]
    fn zero_returns_mean_zero_turnover_after_entry() {
        let values = DMatrix::zeros(2, 6);
        let panel = ReturnsPanel::from_values(values).unwrap();
        let cfg = BacktestConfig {
            train_length: 3,
            rebalance_every: 1,
            tc: 0.0050,
            strategy: Strategy::EqualWeight,
            ..BacktestConfig::default()
        };
        let report = run_backtest(&panel, &[0.0; 6], &cfg).unwrap();
        // first trade is the entry from the zero portfolio
        assert!((report.trades[0] - 1.0).abs() < 1e-15);
        for trade in &report.trades[1..] {
            assert_eq!(*trade, 0.0);
        }
        for (g, n) in report.gross_returns.iter().zip(&report.net_returns[1..]) {
            assert_eq!(*g, 0.0);
            assert_eq!(*n, 0.0);
        }
    }

    #[test]
    fn hand_computed_three_period_fixture() {
        let panel = two_asset_panel();
        let cfg = BacktestConfig {
            train_length: 2,
            rebalance_every: 1,
            tc: 0.005,
            strategy: Strategy::EqualWeight,
            ..BacktestConfig::default()
        };
        let report = run_backtest(&panel, &[0.0; 5], &cfg).unwrap();

        // Manual arithmetic from the definitions.
        let gross2 = 0.5 * 0.02 + 0.5 * 0.01;
        let net2 = gross2 - 0.005 * (1.0 + gross2) * 1.0;
        let wplus_a: f64 = 0.5 * 1.02 / (1.0 + gross2);
        let wplus_b: f64 = 0.5 * 1.01 / (1.0 + gross2);
        let trade2 = (0.5 - wplus_a).abs() + (0.5 - wplus_b).abs();
        let gross3 = 0.5 * (-0.01) + 0.5 * 0.02;
        let net3 = gross3 - 0.005 * (1.0 + gross3) * trade2;
        let wplus_a3: f64 = 0.5 * 0.99 / (1.0 + gross3);
        let wplus_b3: f64 = 0.5 * 1.02 / (1.0 + gross3);
        let trade3 = (0.5 - wplus_a3).abs() + (0.5 - wplus_b3).abs();
        let gross4 = 0.5 * 0.03 + 0.5 * 0.0;
        let net4 = gross4 - 0.005 * (1.0 + gross4) * trade3;

        let expect_gross = [gross2, gross3, gross4];
        let expect_net = [net2, net3, net4];
        let expect_trades = [1.0, trade2, trade3];
        for i in 0..3 {
            assert!((report.gross_returns[i] - expect_gross[i]).abs() < 1e-12);
            assert!((report.net_returns[i] - expect_net[i]).abs() < 1e-12);
            assert!((report.trades[i] - expect_trades[i]).abs() < 1e-12);
        }
        let turnover = (1.0 + trade2 + trade3) / 3.0;
        assert!((report.summary.turnover - turnover).abs() < 1e-12);
        let cer = (1.0 + net2) * (1.0 + net3) * (1.0 + net4) - 1.0;
        assert!((report.cer_windows[0].cer - cer).abs() < 1e-12);
    }

    #[test]
    fn no_lookahead_future_data_irrelevant() {
        // weights applied to period t+1 depend only on data through t:
        // perturbing later periods must not change earlier returns.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let values = DMatrix::from_fn(3, 30, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.01 * z
        });
        let panel = ReturnsPanel::from_values(values.clone()).unwrap();
        let cfg = BacktestConfig {
            train_length: 10,
            rebalance_every: 5,
            tc: 0.002,
            strategy: Strategy::SampleInverse,
            ..BacktestConfig::default()
        };
        let base = run_backtest(&panel, &[0.0; 30], &cfg).unwrap();

        let mut perturbed = values;
        for i in 0..3 {
            perturbed[(i, 29)] += 0.5;
        }
        let panel2 = ReturnsPanel::from_values(perturbed).unwrap();
        let alt = run_backtest(&panel2, &[0.0; 30], &cfg).unwrap();
        for i in 0..(base.gross_returns.len() - 1) {
            assert_eq!(base.gross_returns[i], alt.gross_returns[i]);
            assert_eq!(base.trades[i], alt.trades[i]);
        }
    }

    #[test]
    fn tc_linearity() {
        let panel = two_asset_panel();
        let mk = |tc: f64| BacktestConfig {
            train_length: 2,
            rebalance_every: 1,
            tc,
            strategy: Strategy::EqualWeight,
            ..BacktestConfig::default()
        };
        let r1 = run_backtest(&panel, &[0.0; 5], &mk(0.005)).unwrap();
        let r2 = run_backtest(&panel, &[0.0; 5], &mk(0.010)).unwrap();
        for i in 0..3 {
            let cost1 = r1.gross_returns[i] - r1.net_returns[i];
            let cost2 = r2.gross_returns[i] - r2.net_returns[i];
            assert!((cost2 - 2.0 * cost1).abs() < 1e-15);
        }
    }

    #[test]
    fn index_passthrough_holds_one_asset() {
        let panel = two_asset_panel();
        let cfg = BacktestConfig {
            train_length: 2,
            rebalance_every: 1,
            tc: 0.0,
            strategy: Strategy::IndexPassthrough,
            index_asset: Some("a1".into()),
            ..BacktestConfig::default()
        };
        let report = run_backtest(&panel, &[0.0; 5], &cfg).unwrap();
        let values = panel.values();
        for (i, period) in (2..5).enumerate() {
            assert!((report.gross_returns[i] - values[(1, period)]).abs() < 1e-15);
        }
        // only the entry trade
        assert!((report.summary.turnover - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn estimation_failure_aborts_with_window() {
        // MWC with a constant mean vector is degenerate; SampleInverse path.
        let values = DMatrix::from_fn(2, 10, |i, j| if (i + j) % 2 == 0 { 0.01 } else { -0.01 });
        let panel = ReturnsPanel::from_values(values).unwrap();
        let cfg = BacktestConfig {
            train_length: 4,
            rebalance_every: 1,
            formulation: Formulation::Mwc,
            strategy: Strategy::SampleInverse,
            ..BacktestConfig::default()
        };
        match run_backtest(&panel, &[0.0; 10], &cfg) {
            Err(Error::WindowFailed { .. }) => {}
            other => panic!("expected WindowFailed, got {other:?}"),
        }
    }
}
