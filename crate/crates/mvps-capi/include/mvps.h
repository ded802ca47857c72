#ifndef MVPS_H
#define MVPS_H

/* Generated by cbindgen from the mvps-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MvpsStatus {
  /**
   * The call succeeded.
   */
  MVPS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MVPS_STATUS_NULL_POINTER = 1,
  /**
   * An argument was rejected (bad dimensions, negative weights, an
   * out-of-range state index, or a non-finite parameter).
   */
  MVPS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * An internal invariant failed; the out-parameters are untouched.
   */
  MVPS_STATUS_PANIC = 3,
} MvpsStatus;

/**
 * Opaque handle to the outcome of a structural or enumeration check.
 */
typedef struct MvpsReport MvpsReport;

/**
 * Opaque handle to a finite reinforced-urn model: a concentration
 * parameter, a base probability vector, and a reinforcement matrix.
 */
typedef struct MvpsSpec MvpsSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a model over `k` states labeled `"1"` through `"k"`.
 *
 * `nu` must point to `k` non-negative weights with a positive sum (they
 * are normalized); `matrix` must point to `k * k` row-major non-negative
 * reinforcement entries. On success `*out` owns the new handle and must be
 * released with [`mvps_spec_free`].
 *
 * # Safety
 * `nu` and `matrix` must be readable for `k` and `k * k` doubles, and
 * `out` must be a valid, writable pointer.
 */
enum MvpsStatus mvps_spec_new(double theta,
                              size_t k,
                              const double *nu,
                              const double *matrix,
                              struct MvpsSpec **out);

/**
 * Releases a model handle. A null pointer is ignored.
 *
 * # Safety
 * `spec` must be null or a pointer returned by [`mvps_spec_new`] that has
 * not been freed yet.
 */
void mvps_spec_free(struct MvpsSpec *spec);

/**
 * Number of states of the model, or 0 for a null handle.
 *
 * # Safety
 * `spec` must be null or a live handle.
 */
size_t mvps_spec_num_states(const struct MvpsSpec *spec);

/**
 * Concentration parameter of the model, or NaN for a null handle.
 *
 * # Safety
 * `spec` must be null or a live handle.
 */
double mvps_spec_theta(const struct MvpsSpec *spec);

/**
 * Tests permutation invariance of the joint law of the first `depth`
 * draws, at absolute tolerance `tol`. On success `*out` owns a report
 * handle; release it with [`mvps_report_free`].
 *
 * # Safety
 * `spec` must be a live handle and `out` a valid, writable pointer.
 */
enum MvpsStatus mvps_check_exchangeable(const struct MvpsSpec *spec,
                                        size_t depth,
                                        double tol,
                                        struct MvpsReport **out);

/**
 * Tests the martingale identity of the predictives over every history
 * shorter than `depth`, at absolute tolerance `tol`.
 *
 * # Safety
 * `spec` must be a live handle and `out` a valid, writable pointer.
 */
enum MvpsStatus mvps_check_cid(const struct MvpsSpec *spec,
                               size_t depth,
                               double tol,
                               struct MvpsReport **out);

/**
 * Tests whether every row of the reinforcement matrix adds the same total
 * mass.
 *
 * # Safety
 * `spec` must be a live handle and `out` a valid, writable pointer.
 */
enum MvpsStatus mvps_check_balanced(const struct MvpsSpec *spec, struct MvpsReport **out);

/**
 * Whether the checked property holds: 1 for pass, 0 for fail or a null
 * handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
int32_t mvps_report_passed(const struct MvpsReport *report);

/**
 * Largest residual the check observed, or NaN for a null handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
double mvps_report_max_residual(const struct MvpsReport *report);

/**
 * Releases a report handle. A null pointer is ignored.
 *
 * # Safety
 * `report` must be null or a pointer produced by a check function that has
 * not been freed yet.
 */
void mvps_report_free(struct MvpsReport *report);

/**
 * Writes the predictive probabilities after observing `history` (state
 * indices, 0-based) into `out_probs`, which must hold one double per
 * state.
 *
 * # Safety
 * `spec` must be a live handle, `history` readable for `history_len`
 * entries (or null when `history_len` is 0), and `out_probs` writable for
 * as many doubles as the model has states.
 */
enum MvpsStatus mvps_predictive(const struct MvpsSpec *spec,
                                const size_t *history,
                                size_t history_len,
                                double *out_probs);

/**
 * Draws `n` states of the process with a fixed seed and writes the
 * 0-based state indices into `out_draws`. The same seed always yields the
 * same trajectory.
 *
 * # Safety
 * `spec` must be a live handle and `out_draws` writable for `n` entries.
 */
enum MvpsStatus mvps_simulate(const struct MvpsSpec *spec,
                              size_t n,
                              uint64_t seed,
                              size_t *out_draws);

/**
 * Smallest stick-breaking truncation level whose expected leftover mass is
 * at most `epsilon`, together with that leftover mass.
 *
 * # Safety
 * `out_level` and `out_residual` must be valid, writable pointers.
 */
enum MvpsStatus mvps_truncation_level(double theta,
                                      double epsilon,
                                      size_t *out_level,
                                      double *out_residual);

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *mvps_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVPS_H */
