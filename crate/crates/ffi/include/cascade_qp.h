#ifndef CASCADE_QP_H
#define CASCADE_QP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Return codes of every fallible function.
typedef enum CqpStatus {
  CQP_STATUS_OK = 0,
  CQP_STATUS_NULL_POINTER = 1,
  CQP_STATUS_INVALID_ARGUMENT = 2,
  CQP_STATUS_IO = 3,
  CQP_STATUS_PARSE = 4,
  CQP_STATUS_INVALID_PROBLEM = 5,
  CQP_STATUS_NUMERIC = 6,
  CQP_STATUS_OUT_OF_RANGE = 7,
  CQP_STATUS_BUFFER_TOO_SMALL = 8,
  CQP_STATUS_PANIC = 9,
} CqpStatus;

typedef enum CqpLinearSolver {
  CQP_LINEAR_SOLVER_STRUCTURED = 0,
  CQP_LINEAR_SOLVER_DENSE = 1,
} CqpLinearSolver;

// Outcome stored in a report.
typedef enum CqpSolveStatus {
  CQP_SOLVE_STATUS_CONVERGED = 0,
  CQP_SOLVE_STATUS_MAX_ITERATIONS = 1,
  CQP_SOLVE_STATUS_FACTORIZATION_FAILURE = 2,
} CqpSolveStatus;

// Opaque problem handle.
typedef struct CqpProblem CqpProblem;

// Opaque solve report handle.
typedef struct CqpReport CqpReport;

// Solver settings. Initialise with [`cqp_options_default`].
typedef struct CqpOptions {
  double sigma_bar;
  double tau;
  uint32_t max_iterations;
  // Run exactly this many iterations; 0 disables.
  uint32_t fixed_iterations;
  double tol_gap;
  double tol_residual;
  enum CqpLinearSolver linear_solver;
  uint64_t dense_cap;
} CqpOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *cqp_last_error(void);

// Library version as a static NUL-terminated string.
const char *cqp_version(void);

// # Safety
// `out` must be null or point to writable `CqpOptions`.
enum CqpStatus cqp_options_default(struct CqpOptions *out);

// Reads a problem file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CqpStatus cqp_problem_load(const char *path, struct CqpProblem **out);

// Parses a problem from a JSON string.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum CqpStatus cqp_problem_from_json(const char *json, struct CqpProblem **out);

// # Safety
// `problem` must be a live handle; `path` a NUL-terminated string.
enum CqpStatus cqp_problem_save(const struct CqpProblem *problem, const char *path);

// Synthetic irrigation channel with `num_subsystems` pools.
//
// # Safety
// `out` must be writable.
enum CqpStatus cqp_problem_irrigation(size_t num_subsystems,
                                      size_t horizon,
                                      struct CqpProblem **out);

// Deterministic random instance.
//
// # Safety
// `out` must be writable.
enum CqpStatus cqp_problem_random(uint64_t seed,
                                  size_t num_subsystems,
                                  size_t horizon,
                                  size_t n,
                                  size_t m,
                                  size_t nu,
                                  struct CqpProblem **out);

// Writes the number of invariant violations to `count`. Returns `Ok`
// whether or not the problem is valid; the first violation, if any, is
// available from [`cqp_last_error`].
//
// # Safety
// `problem` must be a live handle; `count` writable.
enum CqpStatus cqp_problem_validate(const struct CqpProblem *problem, size_t *count);

// Number of sub-systems, or 0 for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
size_t cqp_problem_num_subsystems(const struct CqpProblem *problem);

// Horizon `T`, or 0 for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
size_t cqp_problem_horizon(const struct CqpProblem *problem);

// # Safety
// `problem` must be null or a handle not yet freed.
void cqp_problem_free(struct CqpProblem *problem);

// Solves `problem`. A report is produced whenever the iteration ran,
// including non-converged runs; query it with [`cqp_report_status`].
// `options` may be null for the defaults.
//
// # Safety
// `problem` must be a live handle, `options` null or valid, `out` writable.
enum CqpStatus cqp_solve(const struct CqpProblem *problem,
                         const struct CqpOptions *options,
                         struct CqpReport **out);

// # Safety
// `report` must be a live handle.
enum CqpSolveStatus cqp_report_status(const struct CqpReport *report);

// Newton steps taken, or 0 for a null handle.
//
// # Safety
// `report` must be null or a live handle.
size_t cqp_report_iterations(const struct CqpReport *report);

// Objective at the final iterate, NaN for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double cqp_report_objective(const struct CqpReport *report);

// Duality gap at the final iterate, NaN for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double cqp_report_final_mu(const struct CqpReport *report);

// Copies the stacked state trajectory `(x(0), .., x(T))` of sub-system `j`
// (0-based) into `buf`. `written` receives the required length even when
// the buffer is too small, so a null `buf` queries the size.
//
// # Safety
// `buf` must hold `len` doubles; `written` must be writable.
enum CqpStatus cqp_report_state(const struct CqpReport *report,
                                size_t j,
                                double *buf,
                                size_t len,
                                size_t *written);

// Copies the stacked input trajectory `(u(0), .., u(T-1))` of sub-system
// `j`; see [`cqp_report_state`].
//
// # Safety
// As for [`cqp_report_state`].
enum CqpStatus cqp_report_input(const struct CqpReport *report,
                                size_t j,
                                double *buf,
                                size_t len,
                                size_t *written);

// Writes the solution JSON.
//
// # Safety
// `report` must be a live handle; `path` a NUL-terminated string.
enum CqpStatus cqp_report_save(const struct CqpReport *report, const char *path);

// # Safety
// `report` must be null or a handle not yet freed.
void cqp_report_free(struct CqpReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCADE_QP_H */
