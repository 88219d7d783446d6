/* C interface of the qgraph metric-graph spectral library. */

#pragma once

/* Generated with cbindgen:0.26.0 */

/* Generated by cbindgen from the qgraph-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible entry point.
typedef enum QgStatus {
  // Success.
  QG_STATUS_OK = 0,
  // A pointer argument was null or an index was out of range.
  QG_STATUS_INVALID_ARGUMENT = 1,
  // The configuration string is not valid JSON or violates the schema.
  QG_STATUS_PARSE_ERROR = 2,
  // The configuration parsed but describes no self-adjoint operator.
  QG_STATUS_VALIDATION_ERROR = 3,
  // A solver or quadrature stage failed; see qg_last_error_message.
  QG_STATUS_COMPUTE_ERROR = 4,
  // A panic was caught at the ABI boundary.
  QG_STATUS_INTERNAL = 5,
} QgStatus;

// Test-function family for trace-identity evaluation.
typedef enum QgTestFunction {
  // `h(k) = exp(-k^2 t)`; `param` is `t`.
  QG_TEST_FUNCTION_GAUSSIAN = 0,
  // `h(k) = 1/(k^2 + a^2)`; `param` is `a`.
  QG_TEST_FUNCTION_CAUCHY = 1,
} QgTestFunction;

// A computed spectrum. Created by `qg_spectrum_compute`, released by
// `qg_spectrum_free`.
typedef struct QgSpectrum QgSpectrum;

// A metric graph with self-adjoint boundary conditions and its scattering
// data. Created by `qg_system_from_json`, released by `qg_system_free`.
typedef struct QgSystem QgSystem;

// Residuals and side values of one trace-identity evaluation.
typedef struct QgTraceResult {
  // Spectral side.
  double lhs;
  // Geometric side.
  double rhs;
  // `|lhs - rhs|`.
  double residual;
  // 1 when the absolutely convergent grouping applied, 0 otherwise.
  int32_t absolutely_convergent;
} QgTraceResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread; never freed by
// the caller.
const char *qg_last_error_message(void);

// Build a system from a JSON experiment description (same schema as the
// CLI's --config file). On success writes a handle to `out`.
//
// # Safety
// `config_json` must point to a NUL-terminated string; `out` must be a
// valid pointer. The returned handle must be released with
// `qg_system_free` exactly once.
enum QgStatus qg_system_from_json(const char *config_json, struct QgSystem **out);

// Release a system handle. Passing null is a no-op.
//
// # Safety
// `sys` must be a handle from `qg_system_from_json` not yet freed.
void qg_system_free(struct QgSystem *sys);

// Compute the full spectrum up to `k_max` (pass 0 or a negative value
// for the default cutoff of 50).
//
// # Safety
// `sys` must be a live system handle; `out` must be valid. The returned
// handle must be released with `qg_spectrum_free` exactly once.
enum QgStatus qg_spectrum_compute(const struct QgSystem *sys,
                                  double k_max,
                                  struct QgSpectrum **out);

// Release a spectrum handle. Passing null is a no-op.
//
// # Safety
// `spec` must be a handle from `qg_spectrum_compute` not yet freed.
void qg_spectrum_free(struct QgSpectrum *spec);

// Eigenvalue counts: distinct negative roots, zero-mode multiplicity,
// and distinct positive roots. Null out-pointers are skipped.
//
// # Safety
// `spec` must be a live spectrum handle; non-null out-pointers must be
// valid.
enum QgStatus qg_spectrum_counts(const struct QgSpectrum *spec,
                                 uintptr_t *n_negative,
                                 uintptr_t *g0,
                                 uintptr_t *n_positive);

// Positive eigenvalue root `k` and multiplicity at `index` (ascending).
//
// # Safety
// `spec` must be a live spectrum handle; non-null out-pointers must be
// valid.
enum QgStatus qg_spectrum_positive(const struct QgSpectrum *spec,
                                   uintptr_t index,
                                   double *k,
                                   uintptr_t *multiplicity);

// Negative eigenvalue `-kappa^2`: root `kappa` and multiplicity at
// `index` (ascending kappa).
//
// # Safety
// `spec` must be a live spectrum handle; non-null out-pointers must be
// valid.
enum QgStatus qg_spectrum_negative(const struct QgSpectrum *spec,
                                   uintptr_t index,
                                   double *kappa,
                                   uintptr_t *multiplicity);

// Zero-mode data: `g0` is the multiplicity of the eigenvalue zero, `n`
// the multiplicity of the eigenvalue one of the unitary evolution at
// k = 0.
//
// # Safety
// `sys` must be a live system handle; non-null out-pointers must be
// valid.
enum QgStatus qg_zero_modes(const struct QgSystem *sys, uintptr_t *g0, uintptr_t *n);

// Evaluate the trace identity for the given test function against a
// computed spectrum, truncating the orbit sum at topological length
// `n_max`.
//
// # Safety
// `sys` and `spec` must be live handles from this library; `out` must be
// valid.
enum QgStatus qg_trace_verify(const struct QgSystem *sys,
                              const struct QgSpectrum *spec,
                              enum QgTestFunction test_function,
                              double param,
                              uintptr_t n_max,
                              struct QgTraceResult *out);

// Evaluate the heat-trace identity at time `t` against a computed
// spectrum.
//
// # Safety
// `sys` and `spec` must be live handles from this library; `out` must be
// valid.
enum QgStatus qg_heat_verify(const struct QgSystem *sys,
                             const struct QgSpectrum *spec,
                             double t,
                             uintptr_t n_max,
                             struct QgTraceResult *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus
