#ifndef BSGD_TV_H
#define BSGD_TV_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum BsgdStatus {
  BSGD_STATUS_OK = 0,
  BSGD_STATUS_NULL_POINTER = 1,
  BSGD_STATUS_INVALID_ARGUMENT = 2,
  BSGD_STATUS_SHAPE_MISMATCH = 3,
  BSGD_STATUS_IO = 4,
  BSGD_STATUS_PARSE = 5,
  /**
   * The solver diverged; a partial trace is still returned.
   */
  BSGD_STATUS_DIVERGENCE = 6,
  BSGD_STATUS_PANIC = 7,
} BsgdStatus;

typedef enum BsgdSolverKind {
  BSGD_SOLVER_KIND_BSGD = 0,
  BSGD_SOLVER_KIND_ISTA = 1,
  BSGD_SOLVER_KIND_GD = 2,
  BSGD_SOLVER_KIND_ADMM = 3,
} BsgdSolverKind;

/**
 * Opaque reconstruction problem: operator, measurements, ground truth.
 */
typedef struct BsgdProblem BsgdProblem;

/**
 * Opaque convergence trace.
 */
typedef struct BsgdTrace BsgdTrace;

/**
 * Solver settings. Obtain defaults from [`bsgd_solver_config_default`].
 */
typedef struct BsgdSolverConfig {
  double mu;
  double lambda;
  double alpha;
  double gamma;
  uint64_t epochs;
  uint64_t seed;
  uint64_t prox_max_inner_iters;
  double prox_tol;
  double rho;
  uint64_t cg_iters;
  /**
   * 0 uses the default thread pool.
   */
  uint64_t workers;
  bool enforce_decrease;
  bool warm_start_prox;
} BsgdSolverConfig;

typedef struct BsgdTraceSample {
  double epoch;
  double relative_error;
  double objective;
  double matvec_units;
} BsgdTraceSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *bsgd_last_error_message(void);

struct BsgdSolverConfig bsgd_solver_config_default(void);

/**
 * Simulates the default fan-beam scan of an `size x size` phantom and
 * partitions the operator into `row_blocks x col_blocks`. Pass `INFINITY`
 * as `snr_db` for noiseless measurements.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum BsgdStatus bsgd_problem_simulate(size_t size,
                                      size_t angles,
                                      double snr_db,
                                      uint64_t seed,
                                      size_t row_blocks,
                                      size_t col_blocks,
                                      struct BsgdProblem **out);

/**
 * Loads `matrix.txt`, `phantom.txt` and `y_noisy.txt` written by
 * `bsgd-tv simulate` from `data_dir`. `quadtree` selects the pixel layout
 * the matrix was written in (nonzero for quadtree, zero for row-major).
 *
 * # Safety
 * `data_dir` must be a NUL-terminated string; `out` must be writable.
 */
enum BsgdStatus bsgd_problem_load(const char *data_dir,
                                  bool quadtree,
                                  size_t row_blocks,
                                  size_t col_blocks,
                                  struct BsgdProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from this library not yet freed.
 */
void bsgd_problem_free(struct BsgdProblem *problem);

/**
 * # Safety
 * `problem` must be a live handle; `rows` and `cols` must be writable.
 */
enum BsgdStatus bsgd_problem_dims(const struct BsgdProblem *problem, size_t *rows, size_t *cols);

/**
 * Largest eigenvalue of `A^T A` by power iteration.
 *
 * # Safety
 * `problem` must be a live handle; `u_max` must be writable.
 */
enum BsgdStatus bsgd_problem_largest_eigenvalue(const struct BsgdProblem *problem,
                                                double tol,
                                                size_t max_iters,
                                                double *u_max);

/**
 * Runs a solver. On [`BsgdStatus::Divergence`] `*out` still receives the
 * partial trace, which the caller must free.
 *
 * # Safety
 * `problem` and `config` must be valid; `out` must be writable.
 */
enum BsgdStatus bsgd_run(const struct BsgdProblem *problem,
                         enum BsgdSolverKind kind,
                         const struct BsgdSolverConfig *config,
                         size_t sample_every,
                         struct BsgdTrace **out);

/**
 * # Safety
 * `trace` must be null or a handle from this library not yet freed.
 */
void bsgd_trace_free(struct BsgdTrace *trace);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t bsgd_trace_len(const struct BsgdTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle; `sample` must be writable.
 */
enum BsgdStatus bsgd_trace_sample(const struct BsgdTrace *trace,
                                  size_t index,
                                  struct BsgdTraceSample *sample);

/**
 * Copies the final iterate into `buf`, which must hold `len` values equal
 * to the problem's column count.
 *
 * # Safety
 * `trace` must be a live handle; `buf` must be writable for `len` values.
 */
enum BsgdStatus bsgd_trace_final_iterate(const struct BsgdTrace *trace, double *buf, size_t len);

/**
 * Writes the trace as CSV (`epoch,relative_error,objective,matvec_units`).
 *
 * # Safety
 * `trace` must be a live handle; `path` a NUL-terminated string.
 */
enum BsgdStatus bsgd_trace_write_csv(const struct BsgdTrace *trace, const char *path);

/**
 * Isotropic total variation of a row-major image.
 *
 * # Safety
 * `data` must hold `height * width` values; `out` must be writable.
 */
enum BsgdStatus bsgd_tv_value(const double *data, size_t height, size_t width, double *out);

/**
 * `argmin_t ||t - x||^2 + 2 weight TV(t)` for a row-major image; `out` may
 * alias `data`.
 *
 * # Safety
 * `data` and `out` must each hold `height * width` values.
 */
enum BsgdStatus bsgd_tv_prox(const double *data,
                             size_t height,
                             size_t width,
                             double weight,
                             size_t max_inner_iters,
                             double tol,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSGD_TV_H */
