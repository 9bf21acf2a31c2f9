//! `fgl`: factor graphical lasso estimation, portfolio construction,
//! backtesting, and Monte Carlo experiments over flat files.

use clap::{Args, Parser, Subcommand};
use fgl::cli::{cmd_backtest, cmd_estimate, cmd_rates, cmd_simulate, cmd_weights, RunConfig};

#[derive(Parser)]
#[command(
    name = "fgl",
    version,
    about = "High-dimensional precision matrices and optimal portfolios under a factor structure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Input CSV (returns panel, or an experiment table for `rates`).
    #[arg(long)]
    input: Option<String>,
    /// Flat key=value config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<String>,
    /// Master seed for anything randomized.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Clone)]
struct ModelOpts {
    /// Number of factors: 'auto' or a positive integer.
    #[arg(long)]
    k: Option<String>,
    /// Use the elliptical-robust estimators.
    #[arg(long)]
    robust: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the precision matrix of a returns panel.
    Estimate {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Estimate, then write portfolio weights.
    Weights {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        model: ModelOpts,
        /// Portfolio formulation: gmv, mwc, or mrc.
        #[arg(long)]
        formulation: Option<String>,
        /// Per-period return target (mwc).
        #[arg(long)]
        mu: Option<f64>,
        /// Per-period risk target (mrc).
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Rolling out-of-sample backtest with transaction costs.
    Backtest {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        model: ModelOpts,
        /// Strategy: fgl, robust_fgl, gl, sample_inverse, equal_weight, index.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        formulation: Option<String>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Transaction costs in basis points.
        #[arg(long = "tc-bps")]
        tc_bps: Option<f64>,
        /// Observations per estimation window.
        #[arg(long = "train-length")]
        train_length: Option<usize>,
        /// Periods between rebalances.
        #[arg(long = "rebalance-every")]
        rebalance_every: Option<usize>,
        /// Risk-free series CSV (date,value); defaults to zero.
        #[arg(long)]
        riskfree: Option<String>,
        /// Asset held by the index strategy.
        #[arg(long = "index-asset")]
        index_asset: Option<String>,
    },
    /// Monte Carlo experiments (convergence, elliptical, pervasiveness).
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Experiment family: convergence (default), elliptical, pervasiveness.
        #[arg(long)]
        kind: Option<String>,
        /// Comparison case: 1 (p < T) or 2 (p > T).
        #[arg(long)]
        case: Option<String>,
        /// Monte Carlo replications per configuration.
        #[arg(long)]
        nmc: Option<usize>,
        /// Comma-separated h values (T = 2^h).
        #[arg(long)]
        h: Option<String>,
        /// Comma-separated estimators (fgl,robust_fgl,gl,sample_inverse).
        #[arg(long)]
        estimators: Option<String>,
    },
    /// Theoretical-rate overlays fitted against an experiment table.
    Rates {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        nmc: Option<usize>,
        #[arg(long)]
        h: Option<String>,
    },
}

fn build_config(common: &CommonOpts) -> Result<RunConfig, fgl::Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.load_file(std::path::Path::new(path))?;
    }
    if let Some(input) = &common.input {
        cfg.set("input", input.clone());
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(out) = &common.out {
        cfg.set("out", out.clone());
    }
    Ok(cfg)
}

fn apply_model(cfg: &mut RunConfig, model: &ModelOpts) {
    if let Some(k) = &model.k {
        cfg.set("k", k.clone());
    }
    if model.robust {
        cfg.set("robust", "true");
    }
}

macro_rules! set_opt {
    ($cfg:expr, $key:literal, $value:expr) => {
        if let Some(v) = $value {
            $cfg.set($key, v.to_string());
        }
    };
}

fn run() -> Result<(), fgl::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Estimate { common, model } => {
            let mut cfg = build_config(&common)?;
            apply_model(&mut cfg, &model);
            cmd_estimate(&cfg)
        }
        Command::Weights {
            common,
            model,
            formulation,
            mu,
            sigma,
        } => {
            let mut cfg = build_config(&common)?;
            apply_model(&mut cfg, &model);
            set_opt!(cfg, "formulation", formulation);
            set_opt!(cfg, "mu", mu);
            set_opt!(cfg, "sigma", sigma);
            cmd_weights(&cfg)
        }
        Command::Backtest {
            common,
            model,
            strategy,
            formulation,
            mu,
            sigma,
            tc_bps,
            train_length,
            rebalance_every,
            riskfree,
            index_asset,
        } => {
            let mut cfg = build_config(&common)?;
            apply_model(&mut cfg, &model);
            set_opt!(cfg, "strategy", strategy);
            set_opt!(cfg, "formulation", formulation);
            set_opt!(cfg, "mu", mu);
            set_opt!(cfg, "sigma", sigma);
            set_opt!(cfg, "tc_bps", tc_bps);
            set_opt!(cfg, "train_length", train_length);
            set_opt!(cfg, "rebalance_every", rebalance_every);
            set_opt!(cfg, "riskfree", riskfree);
            set_opt!(cfg, "index_asset", index_asset);
            cmd_backtest(&cfg)
        }
        Command::Simulate {
            common,
            kind,
            case,
            nmc,
            h,
            estimators,
        } => {
            let mut cfg = build_config(&common)?;
            set_opt!(cfg, "kind", kind);
            set_opt!(cfg, "case", case);
            set_opt!(cfg, "nmc", nmc);
            set_opt!(cfg, "h", h);
            set_opt!(cfg, "estimators", estimators);
            cmd_simulate(&cfg)
        }
        Command::Rates {
            common,
            case,
            nmc,
            h,
        } => {
            let mut cfg = build_config(&common)?;
            set_opt!(cfg, "case", case);
            set_opt!(cfg, "nmc", nmc);
            set_opt!(cfg, "h", h);
            cmd_rates(&cfg)
        }
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(err.exit_code());
    }
}
