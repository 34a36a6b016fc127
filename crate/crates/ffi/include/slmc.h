#ifndef SLMC_H
#define SLMC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SlmcStatus {
  SLMC_STATUS_OK = 0,
  SLMC_STATUS_NULL_POINTER = 1,
  SLMC_STATUS_INVALID_UTF8 = 2,
  SLMC_STATUS_INVALID_INPUT = 3,
  SLMC_STATUS_INVALID_CONFIG = 4,
  SLMC_STATUS_HYPOTHESIS_VIOLATION = 5,
  SLMC_STATUS_DIVERGENCE = 6,
  SLMC_STATUS_NON_CONVERGENCE = 7,
  SLMC_STATUS_NUMERICAL_FAILURE = 8,
  SLMC_STATUS_BUFFER_TOO_SMALL = 9,
  SLMC_STATUS_OUT_OF_RANGE = 10,
  SLMC_STATUS_IO = 11,
  SLMC_STATUS_PANIC = 12,
} SlmcStatus;

// Sampler choice for [`slmc_run`], passed as an `int32_t`.
typedef enum SlmcSampler {
  SLMC_SAMPLER_SUBSAMPLED = 0,
  SLMC_SAMPLER_FULL_GRADIENT = 1,
} SlmcSampler;

// A statistical model: observations, prior and likelihood.
typedef struct SlmcModel SlmcModel;

// A recorded single-replica path.
typedef struct SlmcTrajectory SlmcTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next library call on the same thread.
const char *slmc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *slmc_version(void);

// Releases a string returned by the library.
//
// # Safety
// `s` must be null or a pointer returned by this library, freed once.
void slmc_string_free(char *s);

// Builds a model from a JSON model spec, e.g.
// `{"prior": {"kind": "gaussian", "mean": [0], "variance": 1},
//   "likelihood": {"kind": "gaussian", "noise_variance": 1},
//   "observations": {"points": [[0.5], [1.5]]}}`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SlmcStatus slmc_model_from_json(const char *json, struct SlmcModel **out);

// Releases a model.
//
// # Safety
// `model` must be null or a live handle from [`slmc_model_from_json`].
void slmc_model_free(struct SlmcModel *model);

// Number of observations and parameter dimension.
//
// # Safety
// `model` must be a live handle; `n` and `dim` must be writable.
enum SlmcStatus slmc_model_shape(const struct SlmcModel *model, size_t *n, size_t *dim);

// `U_{X_i}(θ)`, or `U_{ν_n}(θ)` when `index < 0`.
//
// # Safety
// `theta` must point to `dim` doubles; `out` must be writable.
enum SlmcStatus slmc_model_eval(const struct SlmcModel *model,
                                int64_t index,
                                const double *theta,
                                size_t dim,
                                double *out);

// Gradient of `U_{X_i}` (or `U_{ν_n}` when `index < 0`) written to
// `out[0..dim]`.
//
// # Safety
// `theta` must point to `dim` doubles and `out` to `out_len` writable doubles.
enum SlmcStatus slmc_model_grad(const struct SlmcModel *model,
                                int64_t index,
                                const double *theta,
                                size_t dim,
                                double *out,
                                size_t out_len);

// Smallest Hessian eigenvalue of `U_{X_i}` (or `U_{ν_n}` when `index < 0`).
//
// # Safety
// `theta` must point to `dim` doubles; `out` must be writable.
enum SlmcStatus slmc_model_hessian_min_eig(const struct SlmcModel *model,
                                           int64_t index,
                                           const double *theta,
                                           size_t dim,
                                           double *out);

// Runs one replica and records it at `record_times`. `sampler` is an
// [`SlmcSampler`] value. `config_json` is a sampler config such as
// `{"alpha_n": 1, "h": 0.001, "horizon": 1, "sigma2": 0.1, "seed": 7}`.
//
// # Safety
// `record_times` must point to `count` doubles; `out` must be writable.
enum SlmcStatus slmc_run(const struct SlmcModel *model,
                         const char *config_json,
                         int32_t sampler,
                         const double *record_times,
                         size_t count,
                         struct SlmcTrajectory **out);

// Releases a trajectory.
//
// # Safety
// `traj` must be null or a live handle from [`slmc_run`].
void slmc_trajectory_free(struct SlmcTrajectory *traj);

// Number of records, parameter dimension, gradient evaluations and steps.
//
// # Safety
// `traj` must be a live handle; every output pointer must be writable.
enum SlmcStatus slmc_trajectory_info(const struct SlmcTrajectory *traj,
                                     size_t *records,
                                     size_t *dim,
                                     uint64_t *gradient_evals,
                                     uint64_t *steps);

// Record `k`: its time, `θ` (written to `theta[0..dim]`) and the active
// observation index.
//
// # Safety
// `traj` must be a live handle; `theta` must hold `theta_len` doubles;
// `time` and `active_obs` must be writable.
enum SlmcStatus slmc_trajectory_record(const struct SlmcTrajectory *traj,
                                       size_t k,
                                       double *time,
                                       double *theta,
                                       size_t theta_len,
                                       size_t *active_obs);

// Default jump intensity `1/(n (d ln²n)^{1+r})`.
//
// # Safety
// `out` must be writable.
enum SlmcStatus slmc_default_alpha(size_t n, size_t d, double r, double *out);

// Every theory bound as a JSON object. `inputs_json` holds at least
// `{"n": .., "d": .., "r": ..}`. The result must be released with
// [`slmc_string_free`].
//
// # Safety
// `inputs_json` must be a NUL-terminated string; `out` must be writable.
enum SlmcStatus slmc_theory_report_json(const char *inputs_json, double eps, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLMC_H */
