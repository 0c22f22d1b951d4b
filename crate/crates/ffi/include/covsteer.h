#ifndef COVSTEER_H
#define COVSTEER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CsStatus_Ok = 0,
  CsStatus_NullPointer = 1,
  CsStatus_InvalidInput = 2,
  CsStatus_Infeasible = 3,
  CsStatus_CertificateFailed = 4,
  CsStatus_SolverFailure = 5,
  CsStatus_OutOfRange = 6,
  CsStatus_BufferTooSmall = 7,
  CsStatus_Panic = 8,
} CsStatus;

typedef struct CsProblemHandle CsProblemHandle;

typedef struct CsSolutionHandle CsSolutionHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cs_last_error(void);

/**
 * Parses a problem from a NUL-terminated JSON string.
 *
 * # Safety
 * `json` must be a valid C string and `out` a valid pointer.
 */
enum CsStatus cs_problem_from_json(const char *json, struct CsProblemHandle **out);

/**
 * # Safety
 * `handle` must be null or come from [`cs_problem_from_json`], and must not
 * be used afterwards.
 */
void cs_problem_free(struct CsProblemHandle *handle);

/**
 * State, input and noise dimensions and the horizon.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CsStatus cs_problem_dims(const struct CsProblemHandle *handle,
                              size_t *n,
                              size_t *p,
                              size_t *q,
                              size_t *horizon);

/**
 * Solves the problem. `time_limit` in seconds; zero or negative for none.
 *
 * # Safety
 * `problem` and `out` must be valid pointers.
 */
enum CsStatus cs_solve(const struct CsProblemHandle *problem,
                       double time_limit,
                       struct CsSolutionHandle **out);

/**
 * # Safety
 * `handle` must be null or come from [`cs_solve`], and must not be used
 * afterwards.
 */
void cs_solution_free(struct CsSolutionHandle *handle);

/**
 * # Safety
 * Both pointers must be valid.
 */
enum CsStatus cs_solution_cost(const struct CsSolutionHandle *handle, double *cost);

/**
 * Horizon of a solution.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum CsStatus cs_solution_horizon(const struct CsSolutionHandle *handle, size_t *horizon);

/**
 * Largest `λ_max(UΣ⁻¹Uᵀ − Y)` over the horizon and whether every step is
 * within tolerance.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CsStatus cs_solution_certificate(const struct CsSolutionHandle *handle,
                                      double *global_max,
                                      bool *pass);

/**
 * Feedback gain `K_k` (`p × n`, row-major) for `k < N`.
 *
 * # Safety
 * `handle` must be valid and `buf` must hold `len` doubles.
 */
enum CsStatus cs_solution_gain(const struct CsSolutionHandle *handle,
                               size_t k,
                               double *buf,
                               size_t len);

/**
 * State covariance `Σ_k` (`n × n`) for `k ≤ N`.
 *
 * # Safety
 * `handle` must be valid and `buf` must hold `len` doubles.
 */
enum CsStatus cs_solution_covariance(const struct CsSolutionHandle *handle,
                                     size_t k,
                                     double *buf,
                                     size_t len);

/**
 * State mean `μ_k` for `k ≤ N`.
 *
 * # Safety
 * `handle` must be valid and `buf` must hold `len` doubles.
 */
enum CsStatus cs_solution_mean(const struct CsSolutionHandle *handle,
                               size_t k,
                               double *buf,
                               size_t len);

/**
 * Serializes a solution; release the string with [`cs_string_free`].
 *
 * # Safety
 * Both pointers must be valid.
 */
enum CsStatus cs_solution_to_json(const struct CsSolutionHandle *handle, char **out);

/**
 * # Safety
 * `s` must be null or come from this library, and must not be used
 * afterwards.
 */
void cs_string_free(char *s);

/**
 * Decision-variable count `N·n² + (N−1)(np + p²)` of the per-step program.
 *
 * # Safety
 * `out` must be valid.
 */
enum CsStatus cs_count_variables(size_t n, size_t p, size_t horizon, size_t *out);

/**
 * Standard normal quantile `Φ⁻¹(1 − ε)`.
 *
 * # Safety
 * `out` must be valid.
 */
enum CsStatus cs_tighten_gaussian(double eps, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVSTEER_H */
