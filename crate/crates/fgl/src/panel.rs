//! Returns panel: the raw input to every estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A panel of excess returns: `p` assets observed over `T` periods.
///
/// Values are stored assets-by-periods (`p x T`), unitless per-period
/// fractions. Construction rejects non-finite entries and degenerate shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    values: DMatrix<f64>,
    period_labels: Vec<String>,
    asset_labels: Vec<String>,
}

impl ReturnsPanel {
    /// Build a panel from a `p x T` matrix and matching labels.
    pub fn new(
        values: DMatrix<f64>,
        period_labels: Vec<String>,
        asset_labels: Vec<String>,
    ) -> Result<Self> {
        let (p, t) = (values.nrows(), values.ncols());
        if p < 2 || t < 2 {
            return Err(Error::InvalidArgument(format!(
                "panel needs p >= 2 and T >= 2, got p={p}, T={t}"
            )));
        }
        if period_labels.len() != t {
            return Err(Error::InvalidArgument(format!(
                "expected {t} period labels, got {}",
                period_labels.len()
            )));
        }
        if asset_labels.len() != p {
            return Err(Error::InvalidArgument(format!(
                "expected {p} asset labels, got {}",
                asset_labels.len()
            )));
        }
        for j in 0..t {
            for i in 0..p {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        asset: i,
                        period: j,
                    });
                }
            }
        }
        Ok(Self {
            values,
            period_labels,
            asset_labels,
        })
    }

    /// Panel with synthetic labels (`a0..`, `t0..`), used by simulations.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let periods = (0..values.ncols()).map(|j| format!("t{j}")).collect();
        let assets = (0..values.nrows()).map(|i| format!("a{i}")).collect();
        Self::new(values, periods, assets)
    }

    pub fn num_assets(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_periods(&self) -> usize {
        self.values.ncols()
    }

    /// The `p x T` matrix of returns.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn asset_labels(&self) -> &[String] {
        &self.asset_labels
    }

    /// Per-asset sample means over time.
    pub fn asset_means(&self) -> DVector<f64> {
        let t = self.num_periods() as f64;
        DVector::from_iterator(
            self.num_assets(),
            self.values.row_iter().map(|r| r.sum() / t),
        )
    }

    /// Returns with each asset's time-series mean removed, plus the means.
    pub fn demeaned(&self) -> (DMatrix<f64>, DVector<f64>) {
        let means = self.asset_means();
        let mut centered = self.values.clone();
        for i in 0..self.num_assets() {
            for j in 0..self.num_periods() {
                centered[(i, j)] -= means[i];
            }
        }
        (centered, means)
    }

    /// Sample covariance `(1/T) R~ R~'` of the de-meaned returns.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let (centered, _) = self.demeaned();
        let t = self.num_periods() as f64;
        let mut cov = &centered * centered.transpose();
        cov /= t;
        cov
    }

    /// Sub-panel over a contiguous period range, all assets.
    pub fn window(&self, start: usize, len: usize) -> Result<ReturnsPanel> {
        if start + len > self.num_periods() || len < 2 {
            return Err(Error::InvalidArgument(format!(
                "window [{start}, {}) out of range for T={}",
                start + len,
                self.num_periods()
            )));
        }
        let values = self.values.columns(start, len).into_owned();
        let periods = self.period_labels[start..start + len].to_vec();
        ReturnsPanel::new(values, periods, self.asset_labels.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::zeros(2, 3);
        m[(1, 2)] = f64::NAN;
        let err = ReturnsPanel::from_values(m).unwrap_err();
        match err {
            Error::NonFinite {
                asset: 1,
                period: 2,
            } => {}
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(ReturnsPanel::from_values(DMatrix::zeros(1, 5)).is_err());
        assert!(ReturnsPanel::from_values(DMatrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn demeaned_rows_have_zero_mean() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.25, 2.0]);
        let panel = ReturnsPanel::from_values(m).unwrap();
        let (centered, means) = panel.demeaned();
        assert!((means[0] - 2.5).abs() < 1e-15);
        for i in 0..2 {
            let row_mean: f64 = centered.row(i).sum() / 4.0;
            assert!(row_mean.abs() < 1e-15);
        }
    }
}
