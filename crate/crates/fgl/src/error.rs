//! Error types shared across the library.

/// Errors produced by estimation, portfolio construction, backtesting and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite entry found while building a returns panel.
    #[error("non-finite value for asset {asset} at period {period}")]
    NonFinite { asset: usize, period: usize },

    /// Requested more factors than the data can support.
    #[error("insufficient rank: eigenvalue {index} is numerically zero")]
    InsufficientRank { index: usize },

    /// Observed factors are linearly dependent.
    #[error("collinear factors: factor Gram matrix is singular")]
    CollinearFactors,

    /// Penalty grid cannot be built from a diagonal covariance.
    #[error("degenerate grid: all off-diagonal entries are zero")]
    DegenerateGrid,

    /// Outer graphical-lasso loop hit the sweep limit.
    #[error("solver did not converge after {sweeps} sweeps (last residual {residual:.3e})")]
    NotConverged { sweeps: usize, residual: f64 },

    /// A matrix required to be positive definite was not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The K x K inner system of the low-rank combination is singular.
    #[error("degenerate factor block: inner system is singular")]
    DegenerateFactorBlock,

    /// Robust eigenvalue estimates unusable for the low-rank reconstruction.
    #[error("robust spectrum degenerate: leading eigenvalue {index} is not positive")]
    RobustSpectrumDegenerate { index: usize },

    /// Robust scale estimate collapsed to zero for an asset.
    #[error("robust scale degenerate: asset {asset} has zero spread")]
    DegenerateRobustScale { asset: usize },

    #[error("degenerate denominator in {0}")]
    DegenerateDenominator(String),

    #[error("mean vector orthogonal to the frontier")]
    MeanOrthogonalToFrontier,

    #[error("degenerate frontier: a*d - b^2 is not positive")]
    DegenerateFrontier,

    #[error("zero mean vector: risk-constrained weights undefined")]
    ZeroMeanVector,

    /// Weight drift denominator hit zero.
    #[error("portfolio wiped out: total return of -100% in one period")]
    PortfolioWipedOut,

    #[error("bankruptcy in window: net return at or below -100%")]
    BankruptcyInWindow,

    /// Estimation failed inside a backtest window; the run aborts.
    #[error("estimation failed at window ending in period {window_end}: {source}")]
    WindowFailed {
        window_end: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: usage/config problems exit 2,
    /// computation failures exit 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }
}
