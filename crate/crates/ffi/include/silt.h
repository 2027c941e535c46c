#ifndef SILT_H
#define SILT_H

/* Generated by cbindgen from src/lib.rs at build time. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SiltStatus {
  SILT_STATUS_OK = 0,
  SILT_STATUS_NULL_POINTER = 1,
  SILT_STATUS_INVALID_ARGUMENT = 2,
  SILT_STATUS_INVALID_LAW = 3,
  SILT_STATUS_NOT_SUBCRITICAL = 4,
  SILT_STATUS_MEMORY_CAP = 5,
  SILT_STATUS_NUMERICAL = 6,
  SILT_STATUS_CONFIG = 7,
  /**
   * Validation refused the config; the message lists every diagnostic.
   */
  SILT_STATUS_CONFIG_REFUSED = 8,
  SILT_STATUS_IO = 9,
  SILT_STATUS_PANIC = 10,
} SiltStatus;

/**
 * Opaque Green kernel `(lambda - A_N)^{-1}` on a torus.
 */
typedef struct SiltGreenKernel SiltGreenKernel;

/**
 * Opaque increment law.
 */
typedef struct SiltLaw SiltLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *silt_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *silt_last_error(void);

/**
 * Product law with independent axes, each ±1 with mass 3/8 and ±2 with 1/8.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum SiltStatus silt_law_finite_range(size_t dim, struct SiltLaw **out);

/**
 * Simple random walk.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum SiltStatus silt_law_nearest_neighbor(size_t dim, struct SiltLaw **out);

/**
 * Symmetric law with tail `|x|^{-dim-alpha}` truncated at `truncation`
 * (0 picks the default for the dimension).
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum SiltStatus silt_law_power_tail(size_t dim,
                                    double alpha,
                                    uint64_t truncation,
                                    struct SiltLaw **out);

/**
 * Law from its TOML text record (the `[law]` table of a config).
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum SiltStatus silt_law_from_toml(const char *toml, struct SiltLaw **out);

/**
 * # Safety
 * `law` must come from a `silt_law_*` constructor and not be used afterwards.
 */
void silt_law_free(struct SiltLaw *law);

/**
 * Energy weight `sigma` of the law's small-frequency symbol.
 *
 * # Safety
 * `law` must be a live handle and `out` valid for a write.
 */
enum SiltStatus silt_law_sigma(const struct SiltLaw *law, double *out);

/**
 * # Safety
 * `law` must be a live handle; `dim` and `alpha` valid for writes.
 */
enum SiltStatus silt_law_shape(const struct SiltLaw *law, size_t *dim, double *alpha);

/**
 * Green kernel of `law` on the torus of side `side` with killing `lambda`.
 *
 * # Safety
 * `law` must be a live handle and `out` valid for a pointer write.
 */
enum SiltStatus silt_green_new(const struct SiltLaw *law,
                               size_t side,
                               double lambda,
                               struct SiltGreenKernel **out);

/**
 * # Safety
 * `kernel` must come from `silt_green_new` and not be used afterwards.
 */
void silt_green_free(struct SiltGreenKernel *kernel);

/**
 * Number of torus sites, the length of vectors passed to `silt_green_apply`.
 *
 * # Safety
 * `kernel` must be a live handle and `out` valid for a write.
 */
enum SiltStatus silt_green_len(const struct SiltGreenKernel *kernel, size_t *out);

/**
 * `G(x, y)`; `x` and `y` point to three coordinates each (unused axes 0).
 *
 * # Safety
 * `kernel` must be a live handle, `x` and `y` valid for three reads, `out`
 * valid for a write.
 */
enum SiltStatus silt_green_value(const struct SiltGreenKernel *kernel,
                                 const int64_t *x,
                                 const int64_t *y,
                                 double *out);

/**
 * `output = G input` over row-major site vectors of length `len`.
 *
 * # Safety
 * `input` and `output` must be valid for `len` elements each.
 */
enum SiltStatus silt_green_apply(const struct SiltGreenKernel *kernel,
                                 const double *input,
                                 double *output,
                                 size_t len);

/**
 * `output = (lambda - A_N) input`.
 *
 * # Safety
 * `input` and `output` must be valid for `len` elements each.
 */
enum SiltStatus silt_green_apply_inverse(const struct SiltGreenKernel *kernel,
                                         const double *input,
                                         double *output,
                                         size_t len);

/**
 * Whole-space constant `rho(a)` for energy weight `sigma`, solved in a
 * periodic box of length `box_len` with `resolution` points per axis.
 * `certified` receives 1 when the solver met its residual tolerance.
 *
 * # Safety
 * `value` and `certified` must be valid for writes.
 */
enum SiltStatus silt_rho_whole_space(size_t dim,
                                     double alpha,
                                     double p,
                                     double a,
                                     double sigma,
                                     double box_len,
                                     size_t resolution,
                                     double *value,
                                     int32_t *certified);

/**
 * Runs a TOML experiment config, writing artifacts into `out_dir`.
 * `exit_code` receives the run status as the CLI would report it.
 *
 * # Safety
 * `config` and `out_dir` must be NUL-terminated strings; `exit_code` valid
 * for a write.
 */
enum SiltStatus silt_run_config(const char *config,
                                const char *out_dir,
                                size_t workers,
                                int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SILT_H */
