//! Command implementations behind the `fgl` binary: configuration merging,
//! validation, orchestration, and file output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::backtest::{run_backtest, BacktestConfig, Strategy};
use crate::error::{Error, Result};
use crate::glasso::{bic_path, graph_stats, GlassoConfig, PenaltyWeighting, BIC_ZERO_TOL};
use crate::io;
use crate::panel::ReturnsPanel;
use crate::pipeline::{estimate, FactorMode, FglOptions, Robust};
use crate::portfolio::{
    gmv_weights, mrc_weights, mwc_weights, risk_exposure, squared_sharpe, Formulation, MomentInputs,
};
use crate::simulate::{
    convergence_experiment, pervasiveness_experiment, robustness_experiment,
    theoretical_rate_overlay, Case, Estimator, RateCurve, DEFAULT_H_VALUES,
};

/// Flat key/value settings: defaults, overlaid by a config file, overlaid by
/// command-line flags.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    settings: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parse a `key = value` file; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    idx + 1
                ))
            })?;
            self.settings
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.settings.insert(key.to_string(), value.into());
    }

    pub fn set_if_absent(&mut self, key: &str, value: impl Into<String>) {
        self.settings
            .entry(key.to_string())
            .or_insert_with(|| value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required setting '{key}'")))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("setting '{key}': invalid number '{raw}'"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("setting '{key}': invalid integer '{raw}'"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("setting '{key}': invalid integer '{raw}'"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(raw) => Err(Error::Config(format!(
                "setting '{key}': expected a boolean, got '{raw}'"
            ))),
        }
    }

    fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("setting '{key}': invalid number '{s}'"))
                    })
                })
                .collect(),
        }
    }

    fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out").unwrap_or("."))
    }

    fn glasso_config(&self) -> Result<GlassoConfig> {
        let defaults = GlassoConfig::default();
        let weighting = match self.get("penalty_weighting") {
            None | Some("uniform") => PenaltyWeighting::Uniform,
            Some("diagonal_weighted") => PenaltyWeighting::DiagonalWeighted,
            Some(other) => {
                return Err(Error::Config(format!(
                    "setting 'penalty_weighting': unknown mode '{other}'"
                )))
            }
        };
        let cfg = GlassoConfig {
            grid_size: self.get_usize("grid_size", defaults.grid_size)?,
            grid_floor_ratio: self.get_f64("grid_floor_ratio", defaults.grid_floor_ratio)?,
            max_sweeps: self.get_usize("max_sweeps", defaults.max_sweeps)?,
            convergence_tol: self.get_f64("convergence_tol", defaults.convergence_tol)?,
            cd_tol: self.get_f64("cd_tol", defaults.cd_tol)?,
            penalty_weighting: weighting,
        };
        if cfg.grid_size < 2 {
            return Err(Error::Config("grid_size must be >= 2".into()));
        }
        if !(cfg.grid_floor_ratio > 0.0 && cfg.grid_floor_ratio < 1.0) {
            return Err(Error::Config("grid_floor_ratio must lie in (0, 1)".into()));
        }
        Ok(cfg)
    }

    fn fgl_options(&self) -> Result<FglOptions> {
        let factor_mode = match self.get("k") {
            None | Some("auto") => FactorMode::PcaAutoK { k_max: None },
            Some(raw) => {
                let k: usize = raw.parse().map_err(|_| {
                    Error::Config(format!(
                        "setting 'k': expected 'auto' or a positive integer, got '{raw}'"
                    ))
                })?;
                if k == 0 {
                    return Err(Error::Config("setting 'k': must be positive".into()));
                }
                FactorMode::PcaFixedK(k)
            }
        };
        let robust = if self.get_bool("robust", false)? {
            Robust::Elliptical
        } else {
            Robust::None
        };
        Ok(FglOptions {
            factor_mode,
            glasso_cfg: self.glasso_config()?,
            robust,
            demean_observed_factors: self.get_bool("demean_observed_factors", true)?,
        })
    }

    fn formulation(&self) -> Result<Formulation> {
        match self.get("formulation").unwrap_or("gmv") {
            "gmv" => Ok(Formulation::Gmv),
            "mwc" => Ok(Formulation::Mwc),
            "mrc" => Ok(Formulation::Mrc),
            other => Err(Error::Config(format!("unknown formulation '{other}'"))),
        }
    }

    fn strategy(&self) -> Result<Strategy> {
        match self.get("strategy").unwrap_or("fgl") {
            "fgl" => Ok(Strategy::Fgl),
            "robust_fgl" => Ok(Strategy::RobustFgl),
            "gl" => Ok(Strategy::Gl),
            "sample_inverse" => Ok(Strategy::SampleInverse),
            "equal_weight" => Ok(Strategy::EqualWeight),
            "index" | "index_passthrough" => Ok(Strategy::IndexPassthrough),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }

    fn estimators(&self, default: &[Estimator]) -> Result<Vec<Estimator>> {
        match self.get("estimators") {
            None => Ok(default.to_vec()),
            Some(raw) => raw.split(',').map(|s| Estimator::parse(s.trim())).collect(),
        }
    }
}

fn load_panel(cfg: &RunConfig) -> Result<ReturnsPanel> {
    let input = cfg.require("input")?;
    io::read_returns_csv(Path::new(input))
}

#[derive(Serialize)]
struct GraphSummary {
    max_degree: usize,
    edge_incidences: usize,
    support_pairs: usize,
}

#[derive(Serialize)]
struct EstimateSummary {
    method: crate::glasso::Method,
    p: usize,
    t: usize,
    k_hat: usize,
    lambda: f64,
    bic: f64,
    sweeps_used: usize,
    bic_path: Vec<BicPathEntry>,
    graph: GraphSummary,
    wall_time_seconds: f64,
}

#[derive(Serialize)]
struct BicPathEntry {
    lambda: f64,
    bic: f64,
    edge_incidences: usize,
}

/// `estimate`: precision matrix CSV plus a JSON summary.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let opts = cfg.fgl_options()?;
    let start = Instant::now();
    let (est, fit) = estimate(&panel, &opts)?;
    let wall = start.elapsed().as_secs_f64();
    let path = bic_path(&fit.sigma_eps, panel.num_periods(), &opts.glasso_cfg)?;
    let stats = graph_stats(&est.theta, BIC_ZERO_TOL);
    let summary = EstimateSummary {
        method: est.method,
        p: panel.num_assets(),
        t: panel.num_periods(),
        k_hat: fit.k_hat,
        lambda: est.lambda,
        bic: est.bic,
        sweeps_used: est.sweeps_used,
        bic_path: path
            .into_iter()
            .map(|(lambda, bic, edges)| BicPathEntry {
                lambda,
                bic,
                edge_incidences: edges,
            })
            .collect(),
        graph: GraphSummary {
            max_degree: stats.max_degree,
            edge_incidences: stats.edge_count,
            support_pairs: stats.support.len(),
        },
        wall_time_seconds: wall,
    };
    let out = cfg.out_dir();
    io::write_matrix_csv(&out.join("precision.csv"), panel.asset_labels(), &est.theta)?;
    io::write_json(&out.join("estimate_summary.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct WeightsSummary {
    formulation: Formulation,
    mu_target: f64,
    sigma_target: f64,
    phi: f64,
    squared_sharpe: f64,
    sum_weights: f64,
    k_hat: usize,
    lambda: f64,
}

/// `weights`: estimate, then portfolio weights CSV plus a JSON summary.
pub fn cmd_weights(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let opts = cfg.fgl_options()?;
    let formulation = cfg.formulation()?;
    let mu = cfg.get_f64("mu", 0.000378)?;
    let sigma = cfg.get_f64("sigma", 0.013)?;
    let (est, fit) = estimate(&panel, &opts)?;
    let inp = MomentInputs::new(est.theta.clone(), fit.asset_means.clone())?;
    let weights = match formulation {
        Formulation::Gmv => gmv_weights(&inp)?,
        Formulation::Mwc => mwc_weights(&inp, mu)?,
        Formulation::Mrc => mrc_weights(&inp, sigma)?,
    };
    let phi = risk_exposure(&inp, formulation, mu, sigma)?;
    let summary = WeightsSummary {
        formulation,
        mu_target: mu,
        sigma_target: sigma,
        phi,
        squared_sharpe: squared_sharpe(&inp),
        sum_weights: weights.w.sum(),
        k_hat: fit.k_hat,
        lambda: est.lambda,
    };
    let out = cfg.out_dir();
    let w: Vec<f64> = weights.w.iter().copied().collect();
    io::write_weights_csv(&out.join("weights.csv"), panel.asset_labels(), &w)?;
    io::write_json(&out.join("weights_summary.json"), &summary)?;
    Ok(())
}

/// `backtest`: rolling evaluation, JSON report plus per-period CSV.
pub fn cmd_backtest(cfg: &RunConfig) -> Result<()> {
    let panel = load_panel(cfg)?;
    let riskfree = match cfg.get("riskfree") {
        Some(path) => {
            let (_, values) = io::read_series_csv(Path::new(path))?;
            if values.len() != panel.num_periods() {
                return Err(Error::Config(format!(
                    "risk-free series has {} periods, panel has {}",
                    values.len(),
                    panel.num_periods()
                )));
            }
            values
        }
        None => vec![0.0; panel.num_periods()],
    };
    let bt_cfg = BacktestConfig {
        train_length: cfg.get_usize("train_length", 252)?,
        rebalance_every: cfg.get_usize("rebalance_every", 21)?,
        tc: cfg.get_f64("tc_bps", 50.0)? / 10_000.0,
        mu_target: cfg.get_f64("mu", 0.000378)?,
        sigma_target: cfg.get_f64("sigma", 0.013)?,
        formulation: cfg.formulation()?,
        strategy: cfg.strategy()?,
        min_history: cfg.get_usize("min_history", 2)?,
        fgl_options: cfg.fgl_options()?,
        index_asset: cfg.get("index_asset").map(str::to_string),
    };
    let report = run_backtest(&panel, &riskfree, &bt_cfg)?;
    let out = cfg.out_dir();
    io::write_json(&out.join("backtest_report.json"), &report)?;
    io::write_backtest_csv(&out.join("backtest_periods.csv"), &report)?;
    Ok(())
}

/// `simulate`: Monte Carlo experiment tables.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.get_u64("seed", 1)?;
    let n_mc = cfg.get_usize("nmc", 100)?;
    let out = cfg.out_dir();
    let kind = cfg.get("kind").unwrap_or("convergence");
    let table = match kind {
        "convergence" => {
            let case = Case::parse(cfg.get("case").unwrap_or("1"))?;
            let h_values = cfg.get_f64_list("h", &DEFAULT_H_VALUES)?;
            let estimators = cfg.estimators(&[Estimator::Fgl, Estimator::Gl])?;
            convergence_experiment(case, &h_values, n_mc, &estimators, seed)?
        }
        "elliptical" => {
            let h = cfg.get_f64("h", 8.0)?;
            let nu_values = cfg.get_f64_list("nu", &[4.2, 7.0, f64::INFINITY])?;
            let estimators = cfg.estimators(&[Estimator::Fgl, Estimator::RobustFgl])?;
            robustness_experiment(h, &nu_values, n_mc, &estimators, seed)?
        }
        "pervasiveness" => {
            let t = cfg.get_usize("t", 300)?;
            let p = cfg.get_usize("p", 300)?;
            let rho_values = cfg.get_f64_list("rho", &[0.4, 0.5, 0.6, 0.7, 0.8, 0.9])?;
            let estimators = cfg.estimators(&[Estimator::Fgl])?;
            pervasiveness_experiment(t, p, &rho_values, n_mc, &estimators, seed)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown simulate kind '{other}' (convergence|elliptical|pervasiveness)"
            )))
        }
    };
    io::write_error_table_csv(&out.join("experiment.csv"), &table)?;
    Ok(())
}

/// `rates`: theoretical-rate overlays fitted to an experiment table (loaded
/// from `input`, or produced by a fresh run).
pub fn cmd_rates(cfg: &RunConfig) -> Result<()> {
    let case = Case::parse(cfg.get("case").unwrap_or("1"))?;
    let h_values = cfg.get_f64_list("h", &DEFAULT_H_VALUES)?;
    let out = cfg.out_dir();
    let table = match cfg.get("input") {
        Some(path) => io::read_error_table_csv(Path::new(path))?,
        None => {
            let n_mc = cfg.get_usize("nmc", 100)?;
            let seed = cfg.get_u64("seed", 1)?;
            let table = convergence_experiment(case, &h_values, n_mc, &[Estimator::Fgl], seed)?;
            io::write_error_table_csv(&out.join("experiment.csv"), &table)?;
            table
        }
    };
    let rates = theoretical_rate_overlay(case, &h_values, &RateCurve::ALL, &table)?;
    io::write_rate_table_csv(&out.join("rates.csv"), &rates)?;
    Ok(())
}

/// Regenerate the committed estimate fixture (used once; kept for
/// reproducibility of the golden files).
pub fn write_fixture_panel(path: &Path, seed: u64) -> Result<()> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let p = 6;
    let t = 80;
    let loadings: Vec<f64> = (0..p).map(|i| 0.6 + 0.1 * i as f64).collect();
    let mut values = DMatrix::zeros(p, t);
    for j in 0..t {
        let f: f64 = StandardNormal.sample(&mut rng);
        for i in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(i, j)] = loadings[i] * 0.01 * f + 0.005 * z;
        }
    }
    let panel = ReturnsPanel::new(
        values,
        (0..t)
            .map(|j| format!("2020-{:02}-{:02}", 1 + j / 28, 1 + j % 28))
            .collect(),
        (0..p).map(|i| format!("A{i}")).collect(),
    )?;
    io::write_returns_csv(path, &panel)
}
