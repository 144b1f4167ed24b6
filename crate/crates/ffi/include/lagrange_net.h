#ifndef LAGRANGE_NET_H
#define LAGRANGE_NET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LnStatus {
  LN_STATUS_OK = 0,
  // Configuration could not be parsed or validated.
  LN_STATUS_CONFIG_ERROR = 2,
  // Oracle, certification or solver failure.
  LN_STATUS_RUNTIME_ERROR = 3,
  LN_STATUS_NULL_POINTER = 4,
  LN_STATUS_INVALID_UTF8 = 5,
  // Output buffer is shorter than the data; the required length is still reported.
  LN_STATUS_BUFFER_TOO_SMALL = 6,
  // A Rust panic was caught at the boundary.
  LN_STATUS_PANIC = 7,
} LnStatus;

// Terminal state of a solver run.
typedef enum LnRunStatus {
  LN_RUN_STATUS_CONVERGED = 0,
  LN_RUN_STATUS_ITERATION_CAP = 1,
  LN_RUN_STATUS_DIVERGED = 2,
} LnRunStatus;

// Parsed experiment configuration.
typedef struct LnExperiment LnExperiment;

// Completed solver run.
typedef struct LnRun LnRun;

// Problem dimensions of an experiment.
typedef struct LnDims {
  size_t dim;
  size_t num_agents;
  size_t num_constraints;
  size_t num_pairs;
  // Length of the stacked primal vector.
  size_t x_len;
  // Length of the consensus multiplier vector.
  size_t lambda_len;
} LnDims;

// KKT residual components.
typedef struct LnKkt {
  double stationarity;
  double constraint;
  double consensus;
} LnKkt;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until the next call into this library.
const char *ln_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ln_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void ln_string_free(char *s);

// Parses a TOML experiment configuration.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum LnStatus ln_experiment_from_toml(const char *toml, struct LnExperiment **out);

// Releases an experiment. Null is ignored.
//
// # Safety
// `exp` must come from [`ln_experiment_from_toml`] and not have been freed.
void ln_experiment_free(struct LnExperiment *exp);

// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum LnStatus ln_experiment_dims(const struct LnExperiment *exp, struct LnDims *out);

// Runs the solver in memory. A run that does not converge still returns `Ok`; inspect [`ln_run_status`].
//
// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum LnStatus ln_experiment_run(const struct LnExperiment *exp,
                                struct LnRun **out);

// Writes the oracle report as JSON into `*out`.
//
// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum LnStatus ln_experiment_oracle_json(const struct LnExperiment *exp, char **out);

// Writes the spectral certificate as JSON into `*out`.
//
// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum LnStatus ln_experiment_certificate_json(const struct LnExperiment *exp, char **out);

// Releases a run. Null is ignored.
//
// # Safety
// `run` must come from [`ln_experiment_run`] and not have been freed.
void ln_run_free(struct LnRun *run);

// # Safety
// `run` must be a live run handle; `out` must be writable.
enum LnStatus ln_run_status(const struct LnRun *run, enum LnRunStatus *out);

// Iterations performed (outer iterations for the method of multipliers).
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum LnStatus ln_run_iterations(const struct LnRun *run, size_t *out);

// KKT residual of the final iterate.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum LnStatus ln_run_kkt_residual(const struct LnRun *run, struct LnKkt *out);

// Copies the final stacked primal iterate into `buf`. `*written` receives the
// full length even when the buffer is too small.
//
// # Safety
// `run` must be a live run handle; `buf` must hold `len` doubles; `written` may be null.
enum LnStatus ln_run_final_x(const struct LnRun *run, double *buf, size_t len, size_t *written);

// Copies the final constraint multipliers into `buf`.
//
// # Safety
// As [`ln_run_final_x`].
enum LnStatus ln_run_final_mu(const struct LnRun *run, double *buf, size_t len, size_t *written);

// Copies the final consensus multipliers into `buf`.
//
// # Safety
// As [`ln_run_final_x`].
enum LnStatus ln_run_final_lambda(const struct LnRun *run,
                                  double *buf,
                                  size_t len,
                                  size_t *written);

// Writes the run summary as JSON into `*out`.
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum LnStatus ln_run_summary_json(const struct LnRun *run, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAGRANGE_NET_H */
