//! C ABI over the factor graphical lasso library.
//!
//! Conventions: every function returns an [`FglStatus`] code; results come
//! back through out-parameters. Handles are opaque pointers created and
//! destroyed here; passing a handle to the wrong `_free` or using it after
//! freeing is undefined behavior, as usual for C APIs. Matrix buffers are
//! column-major. The generated header is `include/fgl.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fgl::portfolio::{gmv_weights, mrc_weights, mwc_weights, MomentInputs};
use fgl::{FactorMode, FglOptions, GlassoConfig, PenaltyWeighting, ReturnsPanel, Robust};
use nalgebra::{DMatrix, DVector};

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FglStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ComputationFailed = 3,
    InvalidUtf8 = 4,
    IoError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized: String = message.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &fgl::Error) -> FglStatus {
    set_last_error(&err.to_string());
    match err {
        fgl::Error::Config(_) | fgl::Error::InvalidArgument(_) => FglStatus::InvalidArgument,
        fgl::Error::Io(_) | fgl::Error::Csv { .. } => FglStatus::IoError,
        _ => FglStatus::ComputationFailed,
    }
}

/// Opaque returns panel handle.
pub struct FglPanel(ReturnsPanel);

/// Opaque precision-estimate handle: the estimated precision matrix plus the
/// training-sample means needed by the weight formulas.
pub struct FglPrecision {
    theta: DMatrix<f64>,
    means: DVector<f64>,
    lambda: f64,
    bic: f64,
    k_hat: usize,
}

/// Estimation options. `k = 0` selects the number of factors by the
/// information criterion. Zeroed numeric fields fall back to defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FglEstimateOptions {
    pub k: usize,
    pub robust: bool,
    pub weighted_penalty: bool,
    pub grid_size: usize,
    pub grid_floor_ratio: f64,
    pub max_sweeps: usize,
    pub convergence_tol: f64,
    pub cd_tol: f64,
}

/// Portfolio formulations exposed through the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FglFormulation {
    Gmv = 0,
    Mwc = 1,
    Mrc = 2,
}

fn options_from(opts: Option<&FglEstimateOptions>) -> FglOptions {
    let defaults = GlassoConfig::default();
    match opts {
        None => FglOptions::default(),
        Some(o) => FglOptions {
            factor_mode: if o.k == 0 {
                FactorMode::PcaAutoK { k_max: None }
            } else {
                FactorMode::PcaFixedK(o.k)
            },
            glasso_cfg: GlassoConfig {
                grid_size: if o.grid_size == 0 {
                    defaults.grid_size
                } else {
                    o.grid_size
                },
                grid_floor_ratio: if o.grid_floor_ratio == 0.0 {
                    defaults.grid_floor_ratio
                } else {
                    o.grid_floor_ratio
                },
                max_sweeps: if o.max_sweeps == 0 {
                    defaults.max_sweeps
                } else {
                    o.max_sweeps
                },
                convergence_tol: if o.convergence_tol == 0.0 {
                    defaults.convergence_tol
                } else {
                    o.convergence_tol
                },
                cd_tol: if o.cd_tol == 0.0 {
                    defaults.cd_tol
                } else {
                    o.cd_tol
                },
                penalty_weighting: if o.weighted_penalty {
                    PenaltyWeighting::DiagonalWeighted
                } else {
                    PenaltyWeighting::Uniform
                },
            },
            robust: if o.robust {
                Robust::Elliptical
            } else {
                Robust::None
            },
            demean_observed_factors: true,
        },
    }
}

fn guard<F: FnOnce() -> FglStatus>(f: F) -> FglStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            FglStatus::Panic
        }
    }
}

/// Build a panel from a column-major `p x t` buffer: `values[i + j*p]` is
/// the return of asset `i` in period `j`.
///
/// # Safety
/// `values` must point to `p * t` readable doubles; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn fgl_panel_from_values(
    values: *const f64,
    p: usize,
    t: usize,
    out: *mut *mut FglPanel,
) -> FglStatus {
    if values.is_null() || out.is_null() {
        set_last_error("null pointer");
        return FglStatus::NullPointer;
    }
    guard(|| {
        let slice = std::slice::from_raw_parts(values, p * t);
        match ReturnsPanel::from_values(DMatrix::from_column_slice(p, t, slice)) {
            Ok(panel) => {
                *out = Box::into_raw(Box::new(FglPanel(panel)));
                FglStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Read a panel from a returns CSV (header `date,<asset>...`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fgl_panel_read_csv(
    path: *const c_char,
    out: *mut *mut FglPanel,
) -> FglStatus {
    if path.is_null() || out.is_null() {
        set_last_error("null pointer");
        return FglStatus::NullPointer;
    }
    guard(|| {
        let raw = CStr::from_ptr(path);
        let path = match raw.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_last_error("path is not valid UTF-8");
                return FglStatus::InvalidUtf8;
            }
        };
        match fgl::io::read_returns_csv(Path::new(path)) {
            Ok(panel) => {
                *out = Box::into_raw(Box::new(FglPanel(panel)));
                FglStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Number of assets in the panel.
///
/// # Safety
/// `panel` must be a live handle from a `fgl_panel_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn fgl_panel_num_assets(panel: *const FglPanel) -> usize {
    if panel.is_null() {
        return 0;
    }
    (*panel).0.num_assets()
}

/// Number of periods in the panel.
///
/// # Safety
/// `panel` must be a live handle from a `fgl_panel_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn fgl_panel_num_periods(panel: *const FglPanel) -> usize {
    if panel.is_null() {
        return 0;
    }
    (*panel).0.num_periods()
}

/// Destroy a panel handle. Accepts NULL.
///
/// # Safety
/// `panel` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgl_panel_free(panel: *mut FglPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Run the full estimation pipeline on a panel.
///
/// # Safety
/// `panel` must be live; `opts` NULL or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fgl_estimate(
    panel: *const FglPanel,
    opts: *const FglEstimateOptions,
    out: *mut *mut FglPrecision,
) -> FglStatus {
    if panel.is_null() || out.is_null() {
        set_last_error("null pointer");
        return FglStatus::NullPointer;
    }
    guard(|| {
        let options = options_from(opts.as_ref());
        match fgl::estimate(&(*panel).0, &options) {
            Ok((est, fit)) => {
                *out = Box::into_raw(Box::new(FglPrecision {
                    theta: est.theta,
                    means: fit.asset_means,
                    lambda: est.lambda,
                    bic: est.bic,
                    k_hat: fit.k_hat,
                }));
                FglStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Dimension of the estimated precision matrix.
///
/// # Safety
/// `precision` must be a live handle from [`fgl_estimate`].
#[no_mangle]
pub unsafe extern "C" fn fgl_precision_dim(precision: *const FglPrecision) -> usize {
    if precision.is_null() {
        return 0;
    }
    (*precision).theta.nrows()
}

/// Selected penalty of the sparse stage.
///
/// # Safety
/// `precision` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgl_precision_lambda(precision: *const FglPrecision) -> f64 {
    if precision.is_null() {
        return f64::NAN;
    }
    (*precision).lambda
}

/// Information criterion of the selected penalty.
///
/// # Safety
/// `precision` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgl_precision_bic(precision: *const FglPrecision) -> f64 {
    if precision.is_null() {
        return f64::NAN;
    }
    (*precision).bic
}

/// Number of factors used by the fit.
///
/// # Safety
/// `precision` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgl_precision_k(precision: *const FglPrecision) -> usize {
    if precision.is_null() {
        return 0;
    }
    (*precision).k_hat
}

/// Copy the precision matrix into `buffer` (column-major, `dim * dim`).
///
/// # Safety
/// `buffer` must hold at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fgl_precision_theta(
    precision: *const FglPrecision,
    buffer: *mut f64,
    len: usize,
) -> FglStatus {
    if precision.is_null() || buffer.is_null() {
        set_last_error("null pointer");
        return FglStatus::NullPointer;
    }
    let theta = &(*precision).theta;
    let needed = theta.nrows() * theta.ncols();
    if len < needed {
        set_last_error("buffer too small");
        return FglStatus::BufferTooSmall;
    }
    let dst = std::slice::from_raw_parts_mut(buffer, needed);
    dst.copy_from_slice(theta.as_slice());
    FglStatus::Ok
}

/// Portfolio weights from an estimated precision. `mu` is the return target
/// (weight-constrained), `sigma` the risk budget (risk-constrained).
///
/// # Safety
/// `precision` must be live; `buffer` must hold `len >= dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn fgl_weights(
    precision: *const FglPrecision,
    formulation: FglFormulation,
    mu: f64,
    sigma: f64,
    buffer: *mut f64,
    len: usize,
) -> FglStatus {
    if precision.is_null() || buffer.is_null() {
        set_last_error("null pointer");
        return FglStatus::NullPointer;
    }
    guard(|| {
        let handle = &*precision;
        let p = handle.theta.nrows();
        if len < p {
            set_last_error("buffer too small");
            return FglStatus::BufferTooSmall;
        }
        let inputs = match MomentInputs::new(handle.theta.clone(), handle.means.clone()) {
            Ok(i) => i,
            Err(e) => return status_of(&e),
        };
        let weights = match formulation {
            FglFormulation::Gmv => gmv_weights(&inputs),
            FglFormulation::Mwc => mwc_weights(&inputs, mu),
            FglFormulation::Mrc => mrc_weights(&inputs, sigma),
        };
        match weights {
            Ok(w) => {
                let dst = std::slice::from_raw_parts_mut(buffer, p);
                dst.copy_from_slice(w.w.as_slice());
                FglStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Destroy a precision handle. Accepts NULL.
///
/// # Safety
/// `precision` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgl_precision_free(precision: *mut FglPrecision) {
    if !precision.is_null() {
        drop(Box::from_raw(precision));
    }
}

/// Length (excluding NUL) of the last error message on this thread.
#[no_mangle]
pub extern "C" fn fgl_last_error_len() -> usize {
    LAST_ERROR.with(|slot| slot.borrow().as_bytes().len())
}

/// Copy the last error message (NUL-terminated) into `buffer`.
///
/// # Safety
/// `buffer` must hold at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fgl_last_error_message(buffer: *mut c_char, len: usize) -> FglStatus {
    if buffer.is_null() {
        return FglStatus::NullPointer;
    }
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if len < bytes.len() {
            return FglStatus::BufferTooSmall;
        }
        let dst = std::slice::from_raw_parts_mut(buffer as *mut u8, bytes.len());
        dst.copy_from_slice(bytes);
        FglStatus::Ok
    })
}

/// Static version string of the library.
#[no_mangle]
pub extern "C" fn fgl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
