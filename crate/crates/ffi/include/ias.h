#ifndef IAS_H
#define IAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IasStatus {
  IAS_STATUS_OK = 0,
  IAS_STATUS_NULL_POINTER = 1,
  IAS_STATUS_INVALID_ARGUMENT = 2,
  IAS_STATUS_CONFIG = 3,
  IAS_STATUS_IO = 4,
  IAS_STATUS_SOLVER = 5,
  IAS_STATUS_PANIC = 6,
} IasStatus;

// Vectors a finished run exposes.
typedef enum IasField {
  // Reconstructed signal or image (row-major).
  IAS_FIELD_SIGNAL = 0,
  // Sparse coefficients.
  IAS_FIELD_COEFFICIENTS = 1,
  // Prior variances.
  IAS_FIELD_THETA = 2,
} IasField;

// Opaque experiment configuration.
typedef struct IasConfig IasConfig;

// Opaque finished run.
typedef struct IasRun IasRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message of this thread, or an empty string. The pointer stays
// valid until the next failing call on the same thread.
const char *ias_last_error(void);

// Library version as a static NUL-terminated string.
const char *ias_version(void);

// # Safety
// `name` must be a NUL-terminated string and `out` a writable pointer.
enum IasStatus ias_config_from_preset(const char *name, struct IasConfig **out);

// Parses `key = value` configuration text.
//
// # Safety
// `source` must be a NUL-terminated string and `out` a writable pointer.
enum IasStatus ias_config_parse(const char *source, struct IasConfig **out);

// Applies one `key=value` override.
//
// # Safety
// `cfg` must be a live handle and `assignment` a NUL-terminated string.
enum IasStatus ias_config_set(struct IasConfig *cfg, const char *assignment);

// Writes the resolved configuration as text; release it with
// [`ias_string_free`].
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer.
enum IasStatus ias_config_serialize(const struct IasConfig *cfg, char **out);

// # Safety
// `s` must come from this library and not have been freed. Null is ignored.
void ias_string_free(char *s);

// # Safety
// `cfg` must come from this library and not have been freed. Null is ignored.
void ias_config_free(struct IasConfig *cfg);

// Builds and solves the experiment in memory.
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer.
enum IasStatus ias_solve(const struct IasConfig *cfg, struct IasRun **out);

// Solves the experiment and writes its artifacts into `dir`.
//
// # Safety
// `cfg` must be a live handle, `dir` a NUL-terminated path and `out` a
// writable pointer.
enum IasStatus ias_run_experiment(const struct IasConfig *cfg,
                                  const char *dir,
                                  struct IasRun **out);

// Length of a run vector, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t ias_run_len(const struct IasRun *run, enum IasField f);

// Copies a run vector into `buf`, which must hold at least
// [`ias_run_len`] values.
//
// # Safety
// `run` must be a live handle and `buf` valid for `len` writes.
enum IasStatus ias_run_copy(const struct IasRun *run, enum IasField f, double *buf, size_t len);

// Completed outer iterations, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t ias_run_iterations(const struct IasRun *run);

// # Safety
// `run` must be null or a live handle.
bool ias_run_converged(const struct IasRun *run);

// Relative reconstruction error, or NaN when no ground truth is known.
//
// # Safety
// `run` must be null or a live handle.
double ias_run_relative_error(const struct IasRun *run);

// # Safety
// `run` must come from this library and not have been freed. Null is ignored.
void ias_run_free(struct IasRun *run);

// Closed-form θ-update of a single component for the generalized gamma
// hyperprior with shape `r`, `eta` and scale `vartheta`.
//
// # Safety
// `out` must be a writable pointer.
enum IasStatus ias_theta_update(double r, double eta, double vartheta, double x, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IAS_H */
