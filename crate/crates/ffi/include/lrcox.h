#ifndef LRCOX_H
#define LRCOX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LrcoxStatus {
  LRCOX_STATUS_OK = 0,
  LRCOX_STATUS_NULL_POINTER = 1,
  LRCOX_STATUS_INVALID_ARGUMENT = 2,
  LRCOX_STATUS_DATA = 3,
  /**
   * The fit finished without meeting the feasibility tolerance; the
   * (projected, feasible) result is still returned.
   */
  LRCOX_STATUS_RHO_CAP_HIT = 4,
  LRCOX_STATUS_INTERNAL = 5,
} LrcoxStatus;

/**
 * Opaque dataset handle.
 */
typedef struct LrcoxDataset LrcoxDataset;

/**
 * Opaque fit handle.
 */
typedef struct LrcoxFit LrcoxFit;

/**
 * Solver options; obtain defaults from [`lrcox_options_default`].
 */
typedef struct LrcoxOptions {
  double mu;
  /**
   * Maximum rank; 0 means min(p, J).
   */
  size_t rank;
  /**
   * Maximum number of nonzero rows; 0 means p.
   */
  size_t sparsity;
  double rho0;
  double incr_factor;
  size_t k_max;
  double feas_tol;
  double obj_tol;
  size_t max_rho_steps;
  /**
   * 0: standard Breslow, 1: squared tie-count weighting.
   */
  int tie_mode;
  /**
   * 0: diagonal Hessian, 1: uniform bound.
   */
  int hessian_mode;
  /**
   * Uniform bound value; nonpositive selects it automatically.
   */
  double phi;
} LrcoxOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or NULL. The
 * pointer stays valid until the next lrcox call on the same thread.
 */
const char *lrcox_last_error(void);

struct LrcoxOptions lrcox_options_default(void);

/**
 * New empty dataset with `p` predictors; NULL if `p` is zero.
 */
struct LrcoxDataset *lrcox_dataset_new(size_t p);

/**
 * Appends a population. `x` holds `n * p` covariates in row-major order;
 * `status` entries are 0 (censored) or 1 (event).
 *
 * # Safety
 * `dataset` must come from [`lrcox_dataset_new`]; `name` must be a
 * NUL-terminated string; `time` and `status` must point to `n` values and `x`
 * to `n * p` values.
 */
enum LrcoxStatus lrcox_dataset_add_population(struct LrcoxDataset *dataset,
                                              const char *name,
                                              size_t n,
                                              const double *time,
                                              const int *status,
                                              const double *x);

/**
 * Number of populations added so far (0 for NULL).
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t lrcox_dataset_num_populations(const struct LrcoxDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void lrcox_dataset_free(struct LrcoxDataset *dataset);

/**
 * Fits the constrained estimator. On `Ok` or `RhoCapHit`, `*out` receives a
 * new fit handle; otherwise it is set to NULL. `options` may be NULL for
 * defaults.
 *
 * # Safety
 * `dataset` must be a live handle, `options` NULL or valid, `out` writable.
 */
enum LrcoxStatus lrcox_fit(const struct LrcoxDataset *dataset,
                           const struct LrcoxOptions *options,
                           struct LrcoxFit **out);

/**
 * # Safety
 * `fit` must be a live handle; `p` and `populations` writable or NULL.
 */
enum LrcoxStatus lrcox_fit_dims(const struct LrcoxFit *fit, size_t *p, size_t *populations);

/**
 * Copies the `p x J` coefficient matrix in column-major order (column j is
 * population j) into `out`, which must hold `len >= p * J` values.
 *
 * # Safety
 * `fit` must be a live handle and `out` must point to `len` writable values.
 */
enum LrcoxStatus lrcox_fit_coefficients(const struct LrcoxFit *fit, double *out, size_t len);

/**
 * Writes the zero-based indices of nonzero rows (ascending) into `out` and
 * their count into `*count`. With `out` NULL only the count is reported.
 *
 * # Safety
 * `fit` must be a live handle, `count` writable, and `out` NULL or pointing
 * to `len` writable values.
 */
enum LrcoxStatus lrcox_fit_support(const struct LrcoxFit *fit,
                                   size_t *out,
                                   size_t len,
                                   size_t *count);

/**
 * Rank of the returned estimate (number of retained factors).
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
size_t lrcox_fit_rank(const struct LrcoxFit *fit);

/**
 * `LRCOX_STATUS_OK` if the feasibility tolerance was met, otherwise
 * `LRCOX_STATUS_RHO_CAP_HIT` (or `NULL_POINTER`).
 *
 * # Safety
 * `fit` must be NULL or a live handle.
 */
enum LrcoxStatus lrcox_fit_termination(const struct LrcoxFit *fit);

/**
 * Final penalty parameter and number of penalty steps taken.
 *
 * # Safety
 * `fit` must be a live handle; outputs writable or NULL.
 */
enum LrcoxStatus lrcox_fit_penalty_path(const struct LrcoxFit *fit,
                                        double *final_rho,
                                        size_t *rho_steps);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void lrcox_fit_free(struct LrcoxFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LRCOX_H */
