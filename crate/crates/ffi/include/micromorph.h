#ifndef MICROMORPH_H
#define MICROMORPH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  MM_OK = 0,
  MM_NULL_POINTER = 1,
  MM_INVALID_UTF8 = 2,
  MM_INVALID_CONFIG = 3,
  MM_SOLVE_FAILED = 4,
  /**
   * The command ran but a numerical acceptance threshold failed.
   */
  MM_THRESHOLD_FAILED = 5,
  MM_IO_ERROR = 6,
  MM_INVALID_ARGUMENT = 7,
  MM_PANIC = 8,
} MmStatus;

/**
 * Opaque configuration handle.
 */
typedef struct MmConfig MmConfig;

/**
 * Opaque solved-problem handle.
 */
typedef struct MmSolution MmSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mm_version(void);

/**
 * Message of the most recent failure on this thread; empty when none.
 */
const char *mm_last_error_message(void);

/**
 * Parses a JSON configuration.
 *
 * # Safety
 * `json` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer; both must stay valid for the duration of the
 * call.
 */
MmStatus mm_config_parse_json(const char *json, MmConfig **out);

/**
 * Creates the default configuration.
 *
 * # Safety
 * `out` must point to writable storage for one pointer.
 */
MmStatus mm_config_default(MmConfig **out);

/**
 * Releases a configuration handle; a null pointer is ignored.
 *
 * # Safety
 * `cfg` must be null or a pointer obtained from a `mm_config_*` constructor
 * that has not been freed yet.
 */
void mm_config_free(MmConfig *cfg);

/**
 * Assembles and solves the configured problem (`mms_preset` or zero loads).
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` writable storage for
 * one pointer.
 */
MmStatus mm_solve(const MmConfig *cfg, MmSolution **out);

/**
 * Releases a solution handle; a null pointer is ignored.
 *
 * # Safety
 * `sol` must be null or a pointer obtained from `mm_solve` that has not
 * been freed yet.
 */
void mm_solution_free(MmSolution *sol);

/**
 * Evaluates the discrete pair at a point: out = [u1,u2,u3,P11,...,P33].
 *
 * # Safety
 * `sol` must be a live solution handle and `out` writable storage for 12
 * doubles.
 */
MmStatus mm_solution_evaluate(const MmSolution *sol, double x1, double x2, double x3, double *out);

/**
 * Global norms of the solved pair: out = [‖u‖_L2, ‖∇u‖_L2, ‖P‖_L2,
 * ‖Curl P‖_L2].
 *
 * # Safety
 * `sol` must be a live solution handle and `out` writable storage for 4
 * doubles.
 */
MmStatus mm_solution_norms(const MmSolution *sol, double *out);

/**
 * Iteration count and relative residual of the linear solve.
 *
 * # Safety
 * `sol` must be a live solution handle; non-null outputs must be writable.
 */
MmStatus mm_solution_solver_stats(const MmSolution *sol, uint64_t *iterations, double *residual);

/**
 * Runs the identity verification suites and writes verify_report.json.
 *
 * # Safety
 * `cfg` must be a live configuration handle; `out_dir` a NUL-terminated
 * path string.
 */
MmStatus mm_run_verify(const MmConfig *cfg, const char *out_dir, uint64_t seed);

/**
 * Solves one problem and writes solution.csv / solve_summary.json.
 *
 * # Safety
 * Same contract as [`mm_run_verify`].
 */
MmStatus mm_run_solve(const MmConfig *cfg, const char *out_dir, uint64_t seed);

/**
 * Runs the convergence study and writes convergence.csv / mms_summary.json.
 *
 * # Safety
 * Same contract as [`mm_run_verify`].
 */
MmStatus mm_run_mms(const MmConfig *cfg, const char *out_dir, uint64_t seed);

/**
 * Runs the regularity probes and writes the probe tables and summary.
 *
 * # Safety
 * Same contract as [`mm_run_verify`].
 */
MmStatus mm_run_probe(const MmConfig *cfg, const char *out_dir, uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICROMORPH_H */
