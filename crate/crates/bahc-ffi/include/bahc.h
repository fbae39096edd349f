/* C interface for the bahc covariance filtering library. */

#ifndef BAHC_H
#define BAHC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/* Opaque handle to an n x t returns matrix. */
typedef struct BahcReturns BahcReturns;
/* Opaque handle to a symmetric n x n result matrix. */
typedef struct BahcMatrix BahcMatrix;


// Status codes returned by every fallible function.
typedef enum BahcStatus {
  BAHC_STATUS_OK = 0,
  BAHC_STATUS_NULL_POINTER = 1,
  BAHC_STATUS_INVALID_INPUT = 2,
  BAHC_STATUS_DEGENERATE_DATA = 3,
  BAHC_STATUS_NUMERICAL_ERROR = 4,
} BahcStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Detail of the most recent failure on this thread. The pointer stays valid
// until the next failing call on the same thread. Never null.
const char *bahc_last_error_message(void);

// Library version as a static C string.
const char *bahc_version(void);

// Creates a returns handle from a row-major `n x t` buffer.
//
// # Safety
// `data` must point to `n * t` readable doubles and `out` to a writable
// pointer slot.
enum BahcStatus bahc_returns_create(const double *data,
                                    uintptr_t n,
                                    uintptr_t t,
                                    BahcReturns **out);

// Frees a returns handle. Null is ignored.
//
// # Safety
// `r` must be a pointer from `bahc_returns_create`, not yet freed.
void bahc_returns_free(BahcReturns *r);

// Frees a matrix handle. Null is ignored.
//
// # Safety
// `m` must be a pointer produced by this library, not yet freed.
void bahc_matrix_free(BahcMatrix *m);

// Dimension of a matrix handle (0 for null).
//
// # Safety
// `m` must be a live matrix handle or null.
uintptr_t bahc_matrix_dim(const BahcMatrix *m);

// Entry `(i, j)` of a matrix handle; NaN for null handles or out-of-range
// indices.
//
// # Safety
// `m` must be a live matrix handle or null.
double bahc_matrix_get(const BahcMatrix *m, uintptr_t i, uintptr_t j);

// Copies a matrix into a row-major buffer of length `len >= n * n`.
//
// # Safety
// `buffer` must point to `len` writable doubles; `m` must be live.
enum BahcStatus bahc_matrix_copy(const BahcMatrix *m, double *buffer, uintptr_t len);

// Smallest eigenvalue of a matrix handle.
//
// # Safety
// `m` must be live; `out` writable.
enum BahcStatus bahc_matrix_min_eigenvalue(const BahcMatrix *m, double *out);

// Sample correlation matrix of a returns handle.
//
// # Safety
// `r` must be live; `out` writable.
enum BahcStatus bahc_sample_correlation(const BahcReturns *r, BahcMatrix **out);

// Sample covariance matrix (divisor `t`).
//
// # Safety
// `r` must be live; `out` writable.
enum BahcStatus bahc_sample_covariance(const BahcReturns *r, BahcMatrix **out);

// Average-linkage cluster-filtered correlation matrix.
//
// # Safety
// `r` must be live; `out` writable.
enum BahcStatus bahc_hcal_correlation(const BahcReturns *r, BahcMatrix **out);

// Bootstrapped-average filtered correlation matrix (`m` bootstraps, seeded).
//
// # Safety
// `r` must be live; `out` writable.
enum BahcStatus bahc_filter_correlation(const BahcReturns *r,
                                        uint32_t m,
                                        uint64_t seed,
                                        BahcMatrix **out);

// Bootstrapped-average filtered covariance matrix; shares its draws with
// `bahc_filter_correlation` for the same arguments.
//
// # Safety
// `r` must be live; `out` writable.
enum BahcStatus bahc_filter_covariance(const BahcReturns *r,
                                       uint32_t m,
                                       uint64_t seed,
                                       BahcMatrix **out);

// Ledoit-Wolf linear shrinkage covariance. When `delta_out` is non-null the
// shrinkage intensity is written there.
//
// # Safety
// `r` must be live; `out` writable; `delta_out` writable or null.
enum BahcStatus bahc_lw_covariance(const BahcReturns *r, double *delta_out, BahcMatrix **out);

// Cross-validated eigenvalue shrinkage covariance.
//
// # Safety
// `r` must be live; `out` writable.
enum BahcStatus bahc_cv_covariance(const BahcReturns *r,
                                   uintptr_t folds,
                                   uint64_t seed,
                                   BahcMatrix **out);

// Global minimum-variance weights of a covariance handle, written into
// `weights` (length `len >= n`). `long_only` selects the nonnegative
// variant.
//
// # Safety
// `cov` must be live; `weights` must point to `len` writable doubles.
enum BahcStatus bahc_min_variance_weights(const BahcMatrix *cov,
                                          bool long_only,
                                          double *weights,
                                          uintptr_t len);

// Realized risk `sqrt(w' Sigma w)` of a weight vector against a covariance
// handle.
//
// # Safety
// `cov` must be live; `weights` must point to `len` readable doubles; `out`
// writable.
enum BahcStatus bahc_realized_risk(const BahcMatrix *cov,
                                   const double *weights,
                                   uintptr_t len,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAHC_H */
