#ifndef DPDMON_H
#define DPDMON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum DpdStatus {
  DPD_STATUS_OK = 0,
  DPD_STATUS_NULL_POINTER = 1,
  DPD_STATUS_INVALID_ARGUMENT = 2,
  DPD_STATUS_INSUFFICIENT_DATA = 3,
  DPD_STATUS_DEGENERATE_SAMPLE = 4,
  DPD_STATUS_NOT_CONVERGED = 5,
  DPD_STATUS_SINGULAR_INFORMATION = 6,
  DPD_STATUS_BUFFER_TOO_SMALL = 7,
  DPD_STATUS_PANIC = 8,
} DpdStatus;

typedef enum DpdEngine {
  DPD_ENGINE_NORMAL = 0,
  DPD_ENGINE_GARCH = 1,
} DpdEngine;

// Fitted model with its information estimate.
typedef struct DpdFit DpdFit;

// Sequential monitor with frozen parameters and a constant boundary.
typedef struct DpdMonitor DpdMonitor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *dpd_last_error_message(void);

// `P(sup_{0<s<1} |W(s)| ≤ b)`.
//
// # Safety
// `out` must be a valid pointer to a double.
enum DpdStatus dpd_sup_abs_bm_cdf(double b, double *out);

// Constant boundary of the max-norm detector in dimension `d`.
//
// # Safety
// `out` must be a valid pointer to a double.
enum DpdStatus dpd_critval_sequential(size_t d, double level, double *out);

// Monte Carlo critical value of the retrospective test.
//
// # Safety
// `out` must be a valid pointer to a double.
enum DpdStatus dpd_critval_retro(size_t d,
                                 double level,
                                 size_t grid_n,
                                 size_t n_mc,
                                 uint64_t seed,
                                 double *out);

// Fits `engine` (`p`, `q` ignored for the normal engine) and stores a new
// handle in `*out`.
//
// # Safety
// `data` must point to `len` doubles and `out` must be writable.
enum DpdStatus dpd_fit(const double *data,
                       size_t len,
                       enum DpdEngine engine,
                       size_t p,
                       size_t q,
                       double alpha_value,
                       struct DpdFit **out);

// # Safety
// `fit` must be null or a handle from [`dpd_fit`] not yet freed.
void dpd_fit_free(struct DpdFit *fit);

// Number of parameters, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
size_t dpd_fit_dim(const struct DpdFit *fit);

// # Safety
// `fit` must be a live handle and `out` writable.
enum DpdStatus dpd_fit_objective(const struct DpdFit *fit, double *out);

// Writes the `dim` estimated parameters; GARCH order is
// `(omega, alpha_1..alpha_p, beta_1..beta_q)`, normal is `(mu, sigma)`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `cap` doubles.
enum DpdStatus dpd_fit_theta(const struct DpdFit *fit, double *out, size_t cap);

// Writes the `dim × dim` information estimate in row-major order.
//
// # Safety
// `fit` must be a live handle and `out` must hold `cap` doubles.
enum DpdStatus dpd_fit_info(const struct DpdFit *fit, double *out, size_t cap);

// Starts monitoring after `hist`, the series `fit` was estimated on, with
// the constant boundary `b` and the max norm.
//
// # Safety
// `fit` must be live, `hist` must point to `len` doubles, `out` writable.
enum DpdStatus dpd_monitor_new(const struct DpdFit *fit,
                               const double *hist,
                               size_t len,
                               double b,
                               struct DpdMonitor **out);

// Consumes one observation, writing the detector value and whether it
// exceeds the boundary (1) or not (0).
//
// # Safety
// `mon` must be live; `detector` and `alarm` writable.
enum DpdStatus dpd_monitor_step(struct DpdMonitor *mon, double x, double *detector, int32_t *alarm);

// Observations consumed so far, or 0 for a null handle.
//
// # Safety
// `mon` must be null or live.
size_t dpd_monitor_k(const struct DpdMonitor *mon);

// # Safety
// `mon` must be null or a handle from [`dpd_monitor_new`] not yet freed.
void dpd_monitor_free(struct DpdMonitor *mon);

// Retrospective test against a given critical value. `change_point` is
// 1-based; `reject` is 1 when the statistic exceeds `critical`.
//
// # Safety
// `data` must point to `len` doubles; out-pointers must be writable.
enum DpdStatus dpd_retro(const double *data,
                         size_t len,
                         enum DpdEngine engine,
                         size_t p,
                         size_t q,
                         double alpha_value,
                         double critical,
                         double *statistic,
                         size_t *change_point,
                         int32_t *reject);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPDMON_H */
