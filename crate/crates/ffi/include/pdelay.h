/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef PDELAY_H
#define PDELAY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 1 and 2 agree with the command-line exit codes.
typedef enum PdStatus {
  PD_STATUS_OK = 0,
  PD_STATUS_CONFIG = 1,
  PD_STATUS_DIVERGENCE = 2,
  PD_STATUS_STRUCTURAL = 4,
  PD_STATUS_NUMERICAL = 5,
  PD_STATUS_PROTOCOL = 6,
  PD_STATUS_INAPPLICABLE = 7,
  PD_STATUS_PARSE = 8,
  PD_STATUS_IO = 9,
  PD_STATUS_NULL_POINTER = 10,
  PD_STATUS_INVALID_UTF8 = 11,
  PD_STATUS_BUFFER_TOO_SMALL = 12,
  PD_STATUS_PANIC = 13,
} PdStatus;

// Outcome of [`pd_check_trace`].
typedef enum PdVerdict {
  PD_VERDICT_PASS = 0,
  PD_VERDICT_VIOLATION = 1,
  PD_VERDICT_NOT_APPLICABLE = 2,
} PdVerdict;

// A validated experiment configuration.
typedef struct PdExperiment PdExperiment;

// The result of running an experiment.
typedef struct PdRun PdRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL.
//
// The pointer stays valid until the next call into this library on the
// same thread.
const char *pd_last_error(void);

// Parses and validates a JSON experiment configuration.
//
// Relative file paths inside the document are resolved against `base_dir`
// when it is not NULL.
//
// # Safety
// `json` and `base_dir` (if not NULL) must be NUL-terminated strings;
// `out` must be a valid pointer.
enum PdStatus pd_experiment_from_json(const char *json,
                                      const char *base_dir,
                                      struct PdExperiment **out);

// Overrides the experiment seed.
//
// # Safety
// `exp` must be a handle from [`pd_experiment_from_json`] or NULL.
enum PdStatus pd_experiment_set_seed(struct PdExperiment *exp, uint64_t seed);

// # Safety
// `exp` must be a handle from [`pd_experiment_from_json`] or NULL, and
// must not be used afterwards.
void pd_experiment_free(struct PdExperiment *exp);

// Text report of problem constants, stepsize plans and certificates.
//
// # Safety
// `exp` must be a valid handle; `out` a valid pointer.
enum PdStatus pd_tune_report(const struct PdExperiment *exp, char **out);

// Runs the experiment.
//
// # Safety
// `exp` must be a valid handle; `out` a valid pointer.
enum PdStatus pd_run(const struct PdExperiment *exp, struct PdRun **out);

// # Safety
// `run` must be a handle from [`pd_run`] or NULL, and must not be used
// afterwards.
void pd_run_free(struct PdRun *run);

// Number of iterations performed.
//
// # Safety
// `run` must be a valid handle; `out` a valid pointer.
enum PdStatus pd_run_iterations(const struct PdRun *run, size_t *out);

// The CSV trace of the run.
//
// # Safety
// `run` must be a valid handle; `out` a valid pointer.
enum PdStatus pd_run_trace_csv(const struct PdRun *run, char **out);

// Copies the final iterate, flattened block by block, into `x` and `u`.
//
// On entry `*x_len` and `*u_len` hold the buffer capacities; on return they
// hold the required lengths. Passing NULL buffers queries the lengths only.
// Fails with `BufferTooSmall` (lengths still written) when a buffer is too
// short, and with `Inapplicable` for the dual decomposition baseline.
//
// # Safety
// `x_len`, `u_len` must be valid; non-NULL buffers must hold at least the
// stated capacity.
enum PdStatus pd_run_final_iterate(const struct PdRun *run,
                                   double *x,
                                   size_t *x_len,
                                   double *u,
                                   size_t *u_len);

// Replays a CSV trace against the theory covering the experiment.
//
// # Safety
// `exp` must be a valid handle, `csv` a NUL-terminated string, `verdict`
// a valid pointer; `report` may be NULL.
enum PdStatus pd_check_trace(const struct PdExperiment *exp,
                             const char *csv,
                             enum PdVerdict *verdict,
                             char **report);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library or be NULL, and must not be used
// afterwards.
void pd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDELAY_H */
