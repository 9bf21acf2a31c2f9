//! Flat-file interchange: comma-separated tables for matrices and panels,
//! JSON for structured summaries. All writes go to a temporary file in the
//! destination directory followed by an atomic rename, so failed commands
//! leave no partial output.
//!
//! Floats are serialized with 17 significant digits, which round-trips f64
//! exactly.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::backtest::BacktestReport;
use crate::error::{Error, Result};
use crate::panel::ReturnsPanel;
use crate::simulate::{ErrorTable, RateTable};

/// 17-significant-digit decimal form; parses back to the identical f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_cell(path: &Path, line: usize, column: &str, raw: &str) -> Result<f64> {
    let value: f64 = raw.trim().parse().map_err(|_| Error::Csv {
        path: path.display().to_string(),
        line,
        message: format!(
            "column '{column}': cannot parse '{}' as a number",
            raw.trim()
        ),
    })?;
    if !value.is_finite() {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line,
            message: format!("column '{column}': non-finite value"),
        });
    }
    Ok(value)
}

/// Read a returns panel: header `date,<asset>,...`, one chronological row per
/// period. Rejects ragged rows, duplicate dates, non-numeric cells (with the
/// offending line and column), and degenerate shapes.
pub fn read_returns_csv(path: &Path) -> Result<ReturnsPanel> {
    let text = fs::read_to_string(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        line: 0,
        message: format!("cannot read file: {e}"),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Csv {
        path: path.display().to_string(),
        line: 1,
        message: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.is_empty() || !columns[0].eq_ignore_ascii_case("date") {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line: 1,
            message: "first column must be named 'date'".into(),
        });
    }
    let asset_labels: Vec<String> = columns[1..].iter().map(|s| s.to_string()).collect();
    if asset_labels.len() < 2 {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line: 1,
            message: format!(
                "need at least 2 asset columns, found {}",
                asset_labels.len()
            ),
        });
    }
    let mut period_labels = Vec::new();
    let mut seen_dates = HashSet::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != asset_labels.len() + 1 {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: line_no,
                message: format!(
                    "ragged row: expected {} cells, found {}",
                    asset_labels.len() + 1,
                    cells.len()
                ),
            });
        }
        let date = cells[0].trim().to_string();
        if date.is_empty() {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: line_no,
                message: "empty date cell".into(),
            });
        }
        if !seen_dates.insert(date.clone()) {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: line_no,
                message: format!("duplicate date '{date}'"),
            });
        }
        let mut row = Vec::with_capacity(asset_labels.len());
        for (j, raw) in cells[1..].iter().enumerate() {
            row.push(parse_cell(path, line_no, &asset_labels[j], raw)?);
        }
        period_labels.push(date);
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line: 0,
            message: format!("need at least 2 periods, found {}", rows.len()),
        });
    }
    let p = asset_labels.len();
    let t = rows.len();
    let values = DMatrix::from_fn(p, t, |i, j| rows[j][i]);
    ReturnsPanel::new(values, period_labels, asset_labels)
}

/// Read a `date,value` series (e.g. the risk-free rate).
pub fn read_series_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        line: 0,
        message: format!("cannot read file: {e}"),
    })?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 2 cells, found {}", cells.len()),
            });
        }
        labels.push(cells[0].trim().to_string());
        values.push(parse_cell(path, idx + 1, "value", cells[1])?);
    }
    Ok((labels, values))
}

/// Atomic text write: temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write a returns panel in the same layout `read_returns_csv` expects.
pub fn write_returns_csv(path: &Path, panel: &ReturnsPanel) -> Result<()> {
    let mut out = String::from("date");
    for label in panel.asset_labels() {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for j in 0..panel.num_periods() {
        out.push_str(&panel.period_labels()[j]);
        for i in 0..panel.num_assets() {
            out.push(',');
            out.push_str(&format_float(panel.values()[(i, j)]));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Write a square labeled matrix with an `asset` index column.
pub fn write_matrix_csv(path: &Path, labels: &[String], matrix: &DMatrix<f64>) -> Result<()> {
    let mut out = String::from("asset");
    for label in labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for i in 0..matrix.nrows() {
        out.push_str(&labels[i]);
        for j in 0..matrix.ncols() {
            out.push(',');
            out.push_str(&format_float(matrix[(i, j)]));
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Read a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        line: 0,
        message: format!("cannot read file: {e}"),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Csv {
        path: path.display().to_string(),
        line: 1,
        message: "empty file".into(),
    })?;
    let labels: Vec<String> = header
        .split(',')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let n = labels.len();
    let mut values = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n + 1 {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected {} cells, found {}", n + 1, cells.len()),
            });
        }
        for cell in &cells[1..] {
            values.push(parse_cell(path, idx + 1, "matrix", cell)?);
        }
    }
    if values.len() != n * n {
        return Err(Error::Csv {
            path: path.display().to_string(),
            line: 0,
            message: format!("expected {n} x {n} matrix"),
        });
    }
    Ok((labels, DMatrix::from_row_slice(n, n, &values)))
}

/// Write `(asset, weight)` pairs.
pub fn write_weights_csv(path: &Path, labels: &[String], weights: &[f64]) -> Result<()> {
    let mut out = String::from("asset,weight\n");
    for (label, w) in labels.iter().zip(weights) {
        out.push_str(label);
        out.push(',');
        out.push_str(&format_float(*w));
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Long-format experiment table:
/// `case,h,T,p,K,estimator,metric,value,n_mc,failures`.
pub fn write_error_table_csv(path: &Path, table: &ErrorTable) -> Result<()> {
    let mut out = String::from("case,h,T,p,K,estimator,metric,value,n_mc,failures\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.case_label,
            row.h,
            row.t,
            row.p,
            row.k,
            row.estimator,
            row.metric,
            format_float(row.value),
            row.n_mc,
            row.failures
        ));
    }
    write_atomic(path, &out)
}

/// Read back an experiment table written by [`write_error_table_csv`].
pub fn read_error_table_csv(path: &Path) -> Result<ErrorTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        line: 0,
        message: format!("cannot read file: {e}"),
    })?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 10 {
            return Err(Error::Csv {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 10 cells, found {}", cells.len()),
            });
        }
        let parse_usize = |s: &str, col: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::Csv {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("column '{col}': cannot parse '{s}'"),
            })
        };
        rows.push(crate::simulate::ErrorRow {
            case_label: cells[0].trim().to_string(),
            h: cells[1].trim().parse().map_err(|_| Error::Csv {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("column 'h': cannot parse '{}'", cells[1]),
            })?,
            t: parse_usize(cells[2], "T")?,
            p: parse_usize(cells[3], "p")?,
            k: parse_usize(cells[4], "K")?,
            estimator: cells[5].trim().to_string(),
            metric: cells[6].trim().to_string(),
            value: cells[7].trim().parse().unwrap_or(f64::NAN),
            n_mc: parse_usize(cells[8], "n_mc")?,
            failures: parse_usize(cells[9], "failures")?,
        });
    }
    Ok(ErrorTable { rows })
}

/// Fitted rate-curve table.
pub fn write_rate_table_csv(path: &Path, table: &RateTable) -> Result<()> {
    let mut out = String::from(
        "case,curve,metric,variant,h,T,p,K,s_t,d_t,theory_log2,empirical_log2,\
         intercept,slope,fitted_log2,abs_dev,mad\n",
    );
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.case_label,
            row.curve,
            row.metric,
            row.variant,
            row.h,
            row.t,
            row.p,
            row.k,
            format_float(row.s_t),
            format_float(row.d_t),
            format_float(row.theory_log2),
            format_float(row.empirical_log2),
            format_float(row.intercept),
            format_float(row.slope),
            format_float(row.fitted_log2),
            format_float(row.abs_dev),
            format_float(row.mad),
        ));
    }
    write_atomic(path, &out)
}

/// Per-period backtest results: `period,gross,net,trade`.
pub fn write_backtest_csv(path: &Path, report: &BacktestReport) -> Result<()> {
    let mut out = String::from("period,gross,net,trade\n");
    for i in 0..report.gross_returns.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            report.period_labels[i],
            format_float(report.gross_returns[i]),
            format_float(report.net_returns[i]),
            format_float(report.trades[i]),
        ));
    }
    write_atomic(path, &out)
}
