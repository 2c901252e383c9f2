#ifndef DIFFLAB_H
#define DIFFLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2–4 coincide with the command-line exit codes.
 */
typedef enum DlStatus {
  DL_OK = 0,
  /**
   * A required pointer was NULL or a buffer was too small.
   */
  DL_INVALID_ARGUMENT = 1,
  /**
   * Invalid configuration, value out of domain or failed validation.
   */
  DL_CONFIG = 2,
  /**
   * Numerical failure or degenerate input.
   */
  DL_NUMERICAL = 3,
  /**
   * Artifact mismatch, I/O or format error.
   */
  DL_ARTIFACT = 4,
  /**
   * The requested quantity does not exist (e.g. unreachable target).
   */
  DL_UNREACHABLE = 5,
  /**
   * A panic was caught at the boundary.
   */
  DL_PANIC = 6,
} DlStatus;

/**
 * Sampler families, as in the library.
 */
typedef enum DlSampler {
  DL_SAMPLER_AR = 0,
  DL_SAMPLER_ANCESTRAL_MASKED = 1,
  DL_SAMPLER_ANCESTRAL_UNIFORM = 2,
  DL_SAMPLER_ESO_BLOCK = 3,
} DlSampler;

/**
 * Opaque model handle (a loaded checkpoint).
 */
typedef struct DlModel DlModel;

/**
 * Quadratic IsoFLOP fit; `n_star`/`loss_star` are NaN when `interior` is 0.
 */
typedef struct DlIsoFit {
  double a;
  double b;
  double c;
  int32_t interior;
  double n_star;
  double loss_star;
} DlIsoFit;

typedef struct DlPowerLaw {
  double exponent;
  double intercept;
  double residual_sum;
} DlPowerLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dl_version(void);

/**
 * Copy the calling thread's last error message into `buf` (always
 * NUL-terminated, truncated if needed). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t dl_last_error_message(char *buf, size_t len);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum DlStatus dl_model_load(const char *path, struct DlModel **out);

/**
 * Write a model to a checkpoint file (atomically).
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum DlStatus dl_model_save(const struct DlModel *model, const char *path);

/**
 * Train from a TOML experiment configuration, writing the run's artifacts
 * into `out_dir`, and return the trained model.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be a valid pointer.
 */
enum DlStatus dl_train_from_config(const char *config_toml,
                                   const char *out_dir,
                                   struct DlModel **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle from this library not yet freed.
 */
void dl_model_free(struct DlModel *model);

/**
 * Sequence length, vocabulary size (including any mask token), mask index
 * (−1 if none) and parameter count.
 *
 * # Safety
 * `model` must come from this library; out pointers may be NULL.
 */
enum DlStatus dl_model_shape(const struct DlModel *model,
                             size_t *seq_len,
                             size_t *vocab_size,
                             int64_t *mask_index,
                             size_t *param_count);

/**
 * Bidirectional denoiser prediction at time `t`: writes `len × vocab_size`
 * probabilities (row-major) into `probs`.
 *
 * # Safety
 * `tokens` must hold `len` entries and `probs` `probs_len` writable slots.
 */
enum DlStatus dl_model_predict(const struct DlModel *model,
                               const size_t *tokens,
                               size_t len,
                               double t,
                               double *probs,
                               size_t probs_len);

/**
 * Generate one sequence into `tokens` (`len` must equal the model length).
 * `steps` is the ancestral discretization, `block_spacing` the Eso block
 * spacing (0 = one block per position). Writes the number of denoiser
 * evaluations to `nfe` when non-NULL.
 *
 * # Safety
 * `tokens` must have `len` writable slots.
 */
enum DlStatus dl_model_sample(const struct DlModel *model,
                              enum DlSampler sampler,
                              size_t steps,
                              size_t block_spacing,
                              uint64_t seed,
                              size_t *tokens,
                              size_t len,
                              size_t *nfe);

/**
 * Quadratic fit of log loss against log parameter count at one budget.
 *
 * # Safety
 * `params` and `losses` must each hold `n` values; `out` must be valid.
 */
enum DlStatus dl_fit_isoflop(const double *params,
                             const double *losses,
                             size_t n,
                             struct DlIsoFit *out);

/**
 * Log–log least-squares power law `y = exp(intercept) · x^exponent`.
 *
 * # Safety
 * `x` and `y` must each hold `n` values; `out` must be valid.
 */
enum DlStatus dl_fit_power_law(const double *x, const double *y, size_t n, struct DlPowerLaw *out);

/**
 * Steps at which `alpha + beta · T^gamma` reaches `target`;
 * `DL_UNREACHABLE` when the target lies beyond the asymptote.
 *
 * # Safety
 * `steps` must be a valid pointer.
 */
enum DlStatus dl_invert_quality(double alpha,
                                double beta,
                                double gamma,
                                double target,
                                double *steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFLAB_H */
