#ifndef DTRBAL_H
#define DTRBAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DtrbalStatus {
  DTRBAL_STATUS_OK = 0,
  DTRBAL_STATUS_NULL_POINTER = 1,
  DTRBAL_STATUS_INVALID_ARGUMENT = 2,
  DTRBAL_STATUS_POSITIVITY = 3,
  DTRBAL_STATUS_NUMERIC = 4,
  DTRBAL_STATUS_INVALID_STATE = 5,
  DTRBAL_STATUS_PARSE = 6,
  DTRBAL_STATUS_IO = 7,
  DTRBAL_STATUS_CONFIG = 8,
  /**
   * The QP stopped at its iteration budget; outputs hold the best iterate.
   */
  DTRBAL_STATUS_NOT_CONVERGED = 9,
  DTRBAL_STATUS_PANIC = 10,
} DtrbalStatus;

/**
 * A trajectory dataset.
 */
typedef struct DtrbalDataset DtrbalDataset;

typedef struct DtrbalStats {
  double rmse;
  double bias;
  double sd;
} DtrbalStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next `dtrbal_*` call on the same thread.
 */
const char *dtrbal_last_error(void);

/**
 * Reads a trajectory CSV (`traj_id,t,x_1..x_d,action,reward`) whose actions
 * are labelled -1 and 1.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_dataset` must be writable.
 */
enum DtrbalStatus dtrbal_dataset_read_csv(const char *path, struct DtrbalDataset **out_dataset);

/**
 * Samples `n` trajectories of length `horizon` from the reference process.
 *
 * # Safety
 * `out_dataset` must be writable.
 */
enum DtrbalStatus dtrbal_dataset_simulate(size_t horizon,
                                          size_t n,
                                          uint64_t seed,
                                          struct DtrbalDataset **out_dataset);

/**
 * # Safety
 * `dataset` must be null or a handle returned by this library, not yet freed.
 */
void dtrbal_dataset_free(struct DtrbalDataset *dataset);

/**
 * Number of trajectories, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t dtrbal_dataset_len(const struct DtrbalDataset *dataset);

/**
 * Number of decision steps, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t dtrbal_dataset_horizon(const struct DtrbalDataset *dataset);

/**
 * Estimates the value of `target` (`reference`, `logging`, `uniform` or
 * `constant:<label>`) with one estimator (`ipw`, `ipw_T`, `nipw`, `nipw_T`,
 * `balanced`, `balanced_dr`). `kernel` (`gaussian` or `matern52`) and
 * `lambda` are used by the balanced estimators only; the IPW family assumes
 * the reference logging policy with the given slope.
 *
 * # Safety
 * `dataset` must be a live handle, strings NUL-terminated, `out_value`
 * writable.
 */
enum DtrbalStatus dtrbal_evaluate(const struct DtrbalDataset *dataset,
                                  const char *estimator,
                                  const char *kernel,
                                  double lambda,
                                  const char *target,
                                  double logging_slope,
                                  double *out_value);

/**
 * Monte Carlo value of the reference target regime over `horizon` steps.
 *
 * # Safety
 * `out_value` and `out_standard_error` must be writable.
 */
enum DtrbalStatus dtrbal_oracle(size_t horizon,
                                size_t n_rollouts,
                                uint64_t seed,
                                double *out_value,
                                double *out_standard_error);

/**
 * Minimizes `½ wᵀQw + qᵀw` over `{w ≥ 0, Σw = sum_target}`. `hessian` is
 * `n × n` row-major, `linear` and `out_w` have length `n`.
 *
 * # Safety
 * Array arguments must point to the stated number of elements.
 */
enum DtrbalStatus dtrbal_solve_qp(size_t n,
                                  const double *hessian,
                                  const double *linear,
                                  double sum_target,
                                  double *out_w,
                                  double *out_objective);

/**
 * RMSE, bias and population SD of `len` estimates around `truth`.
 *
 * # Safety
 * `estimates` must point to `len` values; `out_stats` must be writable.
 */
enum DtrbalStatus dtrbal_summarize(const double *estimates,
                                   size_t len,
                                   double truth,
                                   struct DtrbalStats *out_stats);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DTRBAL_H */
