#ifndef CHERRYNET_H
#define CHERRYNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CnMaskKind {
  CN_MASK_KIND_RANDOM = 0,
  CN_MASK_KIND_FIBER = 1,
} CnMaskKind;

typedef enum CnModel {
  CN_MODEL_IFCTN = 0,
  CN_MODEL_FCTN = 1,
  CN_MODEL_TUCKER = 2,
  CN_MODEL_TT = 3,
} CnModel;

/**
 * Result code of every fallible call.
 */
typedef enum CnStatus {
  CN_STATUS_OK = 0,
  CN_STATUS_NULL_POINTER = 1,
  CN_STATUS_INVALID_ARGUMENT = 2,
  CN_STATUS_SHAPE_MISMATCH = 3,
  CN_STATUS_IO = 4,
  CN_STATUS_PARSE = 5,
  CN_STATUS_NON_FINITE = 6,
  CN_STATUS_DECREASE_VIOLATION = 7,
  CN_STATUS_PANIC = 8,
} CnStatus;

/**
 * Opaque result of a completion run.
 */
typedef struct CnSolveReport CnSolveReport;

/**
 * Opaque dense tensor.
 */
typedef struct CnTensor CnTensor;

/**
 * Solver settings. `init_scale <= 0` picks the data-driven default.
 */
typedef struct CnSolverConfig {
  double rho;
  size_t max_iter;
  double eps;
  uint64_t seed;
  double init_scale;
  bool assert_decrease;
  size_t threads;
} CnSolverConfig;

/**
 * Recovery metrics; fields that were not computed are NaN.
 */
typedef struct CnMetrics {
  double psnr;
  double ssim;
  double rse;
  double rmse;
} CnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread ("" after a success).
 * Valid until the next call into this library on the same thread.
 */
const char *cn_last_error(void);

/**
 * Creates a tensor. `values` may be null for zeros, otherwise it must hold
 * the product of `shape` entries.
 *
 * # Safety
 * `shape` must point to `order` entries; `values` (if non-null) to the full
 * element count; `out` must be writable.
 */
enum CnStatus cn_tensor_new(const size_t *shape,
                            size_t order,
                            const double *values,
                            struct CnTensor **out);

/**
 * # Safety
 * `t` must be null or a handle from this library that was not yet freed.
 */
void cn_tensor_free(struct CnTensor *t);

/**
 * Order of the tensor, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t cn_tensor_order(const struct CnTensor *t);

/**
 * Number of elements, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
size_t cn_tensor_len(const struct CnTensor *t);

/**
 * Copies the dimensions into `dims`, which must have room for the order.
 *
 * # Safety
 * `t` must be a live handle and `dims` must have `capacity` slots.
 */
enum CnStatus cn_tensor_shape(const struct CnTensor *t, size_t *dims, size_t capacity);

/**
 * Borrowed pointer to the element data; valid while the handle lives.
 *
 * # Safety
 * `t` must be null or a live handle.
 */
const double *cn_tensor_values(const struct CnTensor *t);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CnStatus cn_tensor_read(const char *path, struct CnTensor **out);

/**
 * # Safety
 * `t` must be a live handle and `path` a NUL-terminated string.
 */
enum CnStatus cn_tensor_write(const struct CnTensor *t, const char *path);

/**
 * Storage cost of `model`. iFCTN and FCTN take the `N(N-1)/2` upper-triangle
 * ranks row by row, Tucker takes `N` ranks and TT `N-1` interior ranks.
 *
 * # Safety
 * `shape` must hold `order` entries, `ranks` `n_ranks` entries; `out` writable.
 */
enum CnStatus cn_param_count(const size_t *shape,
                             size_t order,
                             enum CnModel model,
                             const size_t *ranks,
                             size_t n_ranks,
                             uint64_t *out);

/**
 * Observation mask as a 0/1 tensor (1 = observed). `fiber_mode` is 0-based
 * and ignored for the random kind.
 *
 * # Safety
 * `shape` must hold `order` entries and `out` be writable.
 */
enum CnStatus cn_gen_mask(const size_t *shape,
                          size_t order,
                          enum CnMaskKind kind,
                          double rate,
                          size_t fiber_mode,
                          uint64_t seed,
                          struct CnTensor **out);

struct CnSolverConfig cn_solver_config_default(void);

/**
 * Completes `observed` on the entries where `mask` is 0. `ranks` holds the
 * upper triangle of the iFCTN rank matrix; a null `config` means defaults.
 *
 * # Safety
 * Handles must be live, `ranks` must hold `n_ranks` entries, `out` writable.
 */
enum CnStatus cn_complete(const struct CnTensor *observed,
                          const struct CnTensor *mask,
                          const size_t *ranks,
                          size_t n_ranks,
                          const struct CnSolverConfig *config,
                          struct CnSolveReport **out);

/**
 * # Safety
 * `r` must be null or a live report handle.
 */
void cn_report_free(struct CnSolveReport *r);

/**
 * # Safety
 * `r` must be null or a live report handle.
 */
size_t cn_report_iterations(const struct CnSolveReport *r);

/**
 * # Safety
 * `r` must be null or a live report handle.
 */
bool cn_report_converged(const struct CnSolveReport *r);

/**
 * Objective after each iteration; `*len` receives the count. The pointer is
 * borrowed from the report.
 *
 * # Safety
 * `r` must be null or a live report handle; `len` must be null or writable.
 */
const double *cn_report_objective_trace(const struct CnSolveReport *r, size_t *len);

/**
 * Copies the recovered tensor into a new handle.
 *
 * # Safety
 * `r` must be a live report handle and `out` writable.
 */
enum CnStatus cn_report_recovered(const struct CnSolveReport *r, struct CnTensor **out);

/**
 * Metrics of `recovered` against `truth`. `mask` may be null, in which case
 * `rmse` is NaN; `ssim` is NaN for tensors that are not order 2 or 3.
 *
 * # Safety
 * Handles must be live (or null for `mask`) and `out` writable.
 */
enum CnStatus cn_metrics(const struct CnTensor *truth,
                         const struct CnTensor *recovered,
                         const struct CnTensor *mask,
                         struct CnMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHERRYNET_H */
