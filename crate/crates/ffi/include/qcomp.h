/* C interface to the qcomp Gaussian completion engine. */

#ifndef QCOMP_H
#define QCOMP_H

/* Generated by cbindgen; edit src/lib.rs instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every API function.
 */
typedef enum QcompStatus {
  QCOMP_STATUS_OK = 0,
  /**
   * Bad arguments, unreadable files, schema mismatches.
   */
  QCOMP_STATUS_INVALID_INPUT = 1,
  /**
   * Numerical failure (covariance factorization did not recover).
   */
  QCOMP_STATUS_NUMERICAL = 2,
} QcompStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct QcompModel QcompModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *qcomp_last_error(void);

/**
 * Load a model file. On success `*out` owns the handle; release it with
 * `qcomp_model_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum QcompStatus qcomp_model_load(const char *path, struct QcompModel **out);

/**
 * Release a handle obtained from `qcomp_model_load`. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer returned by `qcomp_model_load` that has
 * not been freed yet.
 */
void qcomp_model_free(struct QcompModel *model);

/**
 * Number of assays the model covers.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t qcomp_model_assay_count(const struct QcompModel *model);

/**
 * Complete one compound.
 *
 * Inputs are length-`p` arrays: `f` base-model predictions, `y` measured
 * values (read only where `observed_mask` is nonzero), and optionally
 * `sigma_f` prediction standard deviations (null to skip composite
 * uncertainty). `out_mean` receives measured values at observed positions
 * and conditional means elsewhere; `out_var` the conditional variances
 * (zero at observed positions); `out_composite_var` (nullable) the
 * composite variances, requiring `sigma_f`.
 *
 * # Safety
 * All non-null pointers must reference arrays of length `p` matching
 * `qcomp_model_assay_count`.
 */
enum QcompStatus qcomp_complete(const struct QcompModel *model,
                                const double *f,
                                const double *y,
                                const uint8_t *observed_mask,
                                const double *sigma_f,
                                double *out_mean,
                                double *out_var,
                                double *out_composite_var);

/**
 * Gain of certainty for an observation pattern, written to `out_goc`
 * (length `p`, standardized units, zero at observed positions).
 *
 * # Safety
 * `observed_mask` and `out_goc` must reference arrays of length `p`.
 */
enum QcompStatus qcomp_goc(const struct QcompModel *model,
                           const uint8_t *observed_mask,
                           double *out_goc);

/**
 * Greedy measurement plan for `target`. Candidates are all assays that are
 * neither observed nor the target. At most `p` steps are written to
 * `out_indices` / `out_marginal_goc`; `*out_len` receives the plan length.
 *
 * # Safety
 * `observed_mask` must have length `p`; the output arrays must have room
 * for `p` entries.
 */
enum QcompStatus qcomp_plan(const struct QcompModel *model,
                            uintptr_t target,
                            const uint8_t *observed_mask,
                            double stop_threshold,
                            uintptr_t *out_indices,
                            double *out_marginal_goc,
                            uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCOMP_H */
