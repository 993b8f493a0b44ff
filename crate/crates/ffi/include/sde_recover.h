#ifndef SDE_RECOVER_H
#define SDE_RECOVER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The numeric values match the CLI exit codes where they overlap.
 */
typedef enum SdrStatus {
  SDR_STATUS_OK = 0,
  SDR_STATUS_NULL_POINTER = 1,
  SDR_STATUS_INVALID_ARGUMENT = 2,
  SDR_STATUS_NON_FINITE_STATE = 3,
  SDR_STATUS_NUMERICAL = 4,
  SDR_STATUS_PANIC = 5,
} SdrStatus;

typedef enum SdrProcess {
  /**
   * `p1 = μ`, `p2 = b`.
   */
  SDR_PROCESS_EXP_DECAY_VOL = 0,
  /**
   * `p1 = k`, `p2 = b`.
   */
  SDR_PROCESS_TRIGONOMETRIC = 1,
  /**
   * `p1 = μ`, `p2 = σ`.
   */
  SDR_PROCESS_GBM = 2,
  /**
   * `p1 = θ`, `p2 = σ`.
   */
  SDR_PROCESS_OU = 3,
} SdrProcess;

typedef enum SdrKernel {
  SDR_KERNEL_MATERN52 = 0,
  SDR_KERNEL_LINEAR = 1,
  SDR_KERNEL_WHITE_NOISE = 2,
} SdrKernel;

typedef enum SdrOptimizer {
  SDR_OPTIMIZER_NORM_BOUNDED_GD = 0,
  SDR_OPTIMIZER_NEWTON_ARMIJO = 1,
} SdrOptimizer;

/**
 * A fitted drift and volatility model.
 */
typedef struct SdrFit SdrFit;

/**
 * A scalar sample path.
 */
typedef struct SdrTrajectory SdrTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null.
 * Valid until the next call into this library on the same thread.
 */
const char *sdr_last_error(void);

/**
 * Euler–Maruyama path with `n_steps + 1` samples.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SdrStatus sdr_simulate(enum SdrProcess process,
                            double p1,
                            double p2,
                            double x0,
                            double dt,
                            size_t n_steps,
                            uint64_t seed,
                            struct SdrTrajectory **out);

/**
 * Wraps observed samples. `times` must be strictly increasing.
 *
 * # Safety
 * `times` and `values` point to `len` doubles each; `out` is a valid handle slot.
 */
enum SdrStatus sdr_trajectory_from_samples(const double *times,
                                           const double *values,
                                           size_t len,
                                           struct SdrTrajectory **out);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `traj` is null or a live handle.
 */
size_t sdr_trajectory_len(const struct SdrTrajectory *traj);

/**
 * Copies times and values into buffers of at least `sdr_trajectory_len` doubles.
 * Either output may be null to skip it.
 *
 * # Safety
 * `traj` is a live handle; non-null outputs hold `cap` writable doubles.
 */
enum SdrStatus sdr_trajectory_read(const struct SdrTrajectory *traj,
                                   double *times_out,
                                   double *values_out,
                                   size_t cap);

/**
 * # Safety
 * `traj` is null or a handle not yet freed.
 */
void sdr_trajectory_free(struct SdrTrajectory *traj);

/**
 * MAP fit with default hyperparameters for the chosen kernel families.
 *
 * # Safety
 * `traj` is a live handle; `out` is a valid handle slot.
 */
enum SdrStatus sdr_fit(const struct SdrTrajectory *traj,
                       enum SdrKernel drift_kernel,
                       enum SdrKernel vol_kernel,
                       enum SdrOptimizer optimizer,
                       struct SdrFit **out);

/**
 * Number of training inputs, or 0 for a null handle.
 *
 * # Safety
 * `fit` is null or a live handle.
 */
size_t sdr_fit_len(const struct SdrFit *fit);

/**
 * Final profile loss, NaN for a null handle.
 *
 * # Safety
 * `fit` is null or a live handle.
 */
double sdr_fit_final_loss(const struct SdrFit *fit);

/**
 * Copies drift and smoothed volatility at the training inputs.
 * Either output may be null to skip it.
 *
 * # Safety
 * `fit` is a live handle; non-null outputs hold `cap` writable doubles.
 */
enum SdrStatus sdr_fit_read(const struct SdrFit *fit, double *f_out, double *sigma_out, size_t cap);

/**
 * Drift mean and volatility at `n` query points.
 * Either output may be null to skip it.
 *
 * # Safety
 * `x` holds `n` doubles; non-null outputs hold `n` writable doubles.
 */
enum SdrStatus sdr_fit_predict(const struct SdrFit *fit,
                               const double *x,
                               size_t n,
                               double *f_out,
                               double *sigma_out);

/**
 * # Safety
 * `fit` is null or a handle not yet freed.
 */
void sdr_fit_free(struct SdrFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDE_RECOVER_H */
