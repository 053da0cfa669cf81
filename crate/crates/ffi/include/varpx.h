#ifndef VARPX_H
#define VARPX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum VarpxStatus {
  VARPX_STATUS_OK = 0,
  VARPX_STATUS_NULL_POINTER = 1,
  VARPX_STATUS_INVALID_UTF8 = 2,
  VARPX_STATUS_CONFIG = 3,
  VARPX_STATUS_HYPOTHESIS = 4,
  VARPX_STATUS_NOT_CONVERGED = 5,
  VARPX_STATUS_NUMERICAL = 6,
  VARPX_STATUS_IO = 7,
  VARPX_STATUS_BUFFER_TOO_SMALL = 8,
  VARPX_STATUS_OUT_OF_RANGE = 9,
  VARPX_STATUS_PANIC = 10,
} VarpxStatus;

/**
 * A validated run configuration.
 */
typedef struct VarpxConfig VarpxConfig;

/**
 * The outcome of a pipeline run.
 */
typedef struct VarpxRun VarpxRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *varpx_version(void);

/**
 * Copies the last error message of this thread into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` bytes (or null to query `needed`).
 */
enum VarpxStatus varpx_last_error(char *buf, size_t len, size_t *needed);

/**
 * Parses and validates a JSON run configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum VarpxStatus varpx_config_parse(const char *json, struct VarpxConfig **out);

/**
 * Overrides the mesh resolution of a parsed config.
 *
 * # Safety
 * `cfg` must be a live handle from [`varpx_config_parse`].
 */
enum VarpxStatus varpx_config_set_resolution(struct VarpxConfig *cfg, size_t n);

/**
 * # Safety
 * `cfg` must be null or a handle from [`varpx_config_parse`], freed once.
 */
void varpx_config_free(struct VarpxConfig *cfg);

/**
 * Runs the pipeline without writing files. A run that completes but is
 * not certified still returns `Ok` with a handle; inspect
 * [`varpx_run_exit_code`].
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
enum VarpxStatus varpx_run(const struct VarpxConfig *cfg, struct VarpxRun **out);

/**
 * CLI-equivalent exit code: 0 certified, 2 not certified.
 *
 * # Safety
 * `run` must be a live run handle.
 */
int32_t varpx_run_exit_code(const struct VarpxRun *run);

/**
 * Number of mesh nodes (length of each solution component).
 *
 * # Safety
 * `run` must be a live run handle.
 */
size_t varpx_run_num_nodes(const struct VarpxRun *run);

/**
 * Copies solution component `component` (1 or 2) into `buf`.
 *
 * # Safety
 * `run` must be a live run handle and `buf` valid for `len` doubles.
 */
enum VarpxStatus varpx_run_solution(const struct VarpxRun *run,
                                    uint32_t component,
                                    double *buf,
                                    size_t len);

/**
 * Largest weak residual of the coupled system at the accepted pair.
 *
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
enum VarpxStatus varpx_run_residual(const struct VarpxRun *run, double *out);

/**
 * Copies the certificate JSON (NUL-terminated) into `buf`.
 *
 * # Safety
 * `run` must be a live run handle, `buf` valid for `len` bytes or null.
 */
enum VarpxStatus varpx_run_certificate_json(const struct VarpxRun *run,
                                            char *buf,
                                            size_t len,
                                            size_t *needed);

/**
 * # Safety
 * `run` must be null or a handle from [`varpx_run`], freed once.
 */
void varpx_run_free(struct VarpxRun *run);

/**
 * Luxemburg norm of the P1 function with nodal values `u` and nodal
 * exponent `p` on a uniform grid of `n` cells over `(a, b)`.
 *
 * # Safety
 * `u` and `p` must be valid for `n + 1` doubles; `out` must be writable.
 */
enum VarpxStatus varpx_luxemburg_norm_1d(double a,
                                         double b,
                                         size_t n,
                                         const double *u,
                                         const double *p,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VARPX_H */
