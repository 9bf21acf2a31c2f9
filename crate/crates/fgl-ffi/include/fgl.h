#ifndef FGL_H
#define FGL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call.
 */
typedef enum FglStatus {
  FglStatus_Ok = 0,
  FglStatus_NullPointer = 1,
  FglStatus_InvalidArgument = 2,
  FglStatus_ComputationFailed = 3,
  FglStatus_InvalidUtf8 = 4,
  FglStatus_IoError = 5,
  FglStatus_BufferTooSmall = 6,
  FglStatus_Panic = 7,
} FglStatus;

/**
 * Portfolio formulations exposed through the ABI.
 */
typedef enum FglFormulation {
  FglFormulation_Gmv = 0,
  FglFormulation_Mwc = 1,
  FglFormulation_Mrc = 2,
} FglFormulation;

/**
 * Opaque returns panel handle.
 */
typedef struct FglPanel FglPanel;

/**
 * Opaque precision-estimate handle: the estimated precision matrix plus the
 * training-sample means needed by the weight formulas.
 */
typedef struct FglPrecision FglPrecision;

/**
 * Estimation options. `k = 0` selects the number of factors by the
 * information criterion. Zeroed numeric fields fall back to defaults.
 */
typedef struct FglEstimateOptions {
  uintptr_t k;
  bool robust;
  bool weighted_penalty;
  uintptr_t grid_size;
  double grid_floor_ratio;
  uintptr_t max_sweeps;
  double convergence_tol;
  double cd_tol;
} FglEstimateOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build a panel from a column-major `p x t` buffer: `values[i + j*p]` is
 * the return of asset `i` in period `j`.
 *
 * # Safety
 * `values` must point to `p * t` readable doubles; `out` must be a valid
 * pointer to receive the handle.
 */
enum FglStatus fgl_panel_from_values(const double *values,
                                     uintptr_t p,
                                     uintptr_t t,
                                     struct FglPanel **out);

/**
 * Read a panel from a returns CSV (header `date,<asset>...`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum FglStatus fgl_panel_read_csv(const char *path, struct FglPanel **out);

/**
 * Number of assets in the panel.
 *
 * # Safety
 * `panel` must be a live handle from a `fgl_panel_*` constructor.
 */
uintptr_t fgl_panel_num_assets(const struct FglPanel *panel);

/**
 * Number of periods in the panel.
 *
 * # Safety
 * `panel` must be a live handle from a `fgl_panel_*` constructor.
 */
uintptr_t fgl_panel_num_periods(const struct FglPanel *panel);

/**
 * Destroy a panel handle. Accepts NULL.
 *
 * # Safety
 * `panel` must be NULL or a handle not yet freed.
 */
void fgl_panel_free(struct FglPanel *panel);

/**
 * Run the full estimation pipeline on a panel.
 *
 * # Safety
 * `panel` must be live; `opts` NULL or valid; `out` valid.
 */
enum FglStatus fgl_estimate(const struct FglPanel *panel,
                            const struct FglEstimateOptions *opts,
                            struct FglPrecision **out);

/**
 * Dimension of the estimated precision matrix.
 *
 * # Safety
 * `precision` must be a live handle from [`fgl_estimate`].
 */
uintptr_t fgl_precision_dim(const struct FglPrecision *precision);

/**
 * Selected penalty of the sparse stage.
 *
 * # Safety
 * `precision` must be a live handle.
 */
double fgl_precision_lambda(const struct FglPrecision *precision);

/**
 * Information criterion of the selected penalty.
 *
 * # Safety
 * `precision` must be a live handle.
 */
double fgl_precision_bic(const struct FglPrecision *precision);

/**
 * Number of factors used by the fit.
 *
 * # Safety
 * `precision` must be a live handle.
 */
uintptr_t fgl_precision_k(const struct FglPrecision *precision);

/**
 * Copy the precision matrix into `buffer` (column-major, `dim * dim`).
 *
 * # Safety
 * `buffer` must hold at least `len` writable doubles.
 */
enum FglStatus fgl_precision_theta(const struct FglPrecision *precision,
                                   double *buffer,
                                   uintptr_t len);

/**
 * Portfolio weights from an estimated precision. `mu` is the return target
 * (weight-constrained), `sigma` the risk budget (risk-constrained).
 *
 * # Safety
 * `precision` must be live; `buffer` must hold `len >= dim` doubles.
 */
enum FglStatus fgl_weights(const struct FglPrecision *precision,
                           enum FglFormulation formulation,
                           double mu,
                           double sigma,
                           double *buffer,
                           uintptr_t len);

/**
 * Destroy a precision handle. Accepts NULL.
 *
 * # Safety
 * `precision` must be NULL or a handle not yet freed.
 */
void fgl_precision_free(struct FglPrecision *precision);

/**
 * Length (excluding NUL) of the last error message on this thread.
 */
uintptr_t fgl_last_error_len(void);

/**
 * Copy the last error message (NUL-terminated) into `buffer`.
 *
 * # Safety
 * `buffer` must hold at least `len` writable bytes.
 */
enum FglStatus fgl_last_error_message(char *buffer, uintptr_t len);

/**
 * Static version string of the library.
 */
const char *fgl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGL_H */
