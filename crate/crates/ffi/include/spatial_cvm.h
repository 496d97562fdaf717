#ifndef SPATIAL_CVM_H
#define SPATIAL_CVM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes. Values 2–4 match the command-line exit codes.
 */
typedef enum SpcvmStatus {
  SPCVM_STATUS_OK = 0,
  SPCVM_STATUS_NULL_POINTER = 1,
  /*
   Invalid configuration or argument.
   */
  SPCVM_STATUS_CONFIG = 2,
  /*
   Malformed data, calibration mismatch or i/o failure.
   */
  SPCVM_STATUS_DATA = 3,
  /*
   Numerical or calibration failure.
   */
  SPCVM_STATUS_NUMERIC = 4,
  SPCVM_STATUS_PANIC = 5,
} SpcvmStatus;

/*
 Null-distribution calibration, owned by the caller. Free with [`spcvm_calibration_free`].
 */
typedef struct SpcvmCalibration SpcvmCalibration;

/*
 Outcome of one test.
 */
typedef struct SpcvmTestResult {
  double tn;
  double a;
  double nu;
  double p_value;
  double eff_n;
} SpcvmTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or an empty string. The
 pointer stays valid until the next library call on the same thread.
 */
const char *spcvm_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *spcvm_version(void);

/*
 Computes a calibration from flat TOML keys (`phi` is required).
 `cache_dir` may be null to bypass the cache.

 # Safety
 `config_toml` and a non-null `cache_dir` must be NUL-terminated strings;
 `out` must be writable.
 */
enum SpcvmStatus spcvm_calibration_new(const char *config_toml,
                                       const char *cache_dir,
                                       struct SpcvmCalibration **out);

/*
 Loads a calibration record written by [`spcvm_calibration_save`] or the
 command-line tool.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpcvmStatus spcvm_calibration_load(const char *path, struct SpcvmCalibration **out);

/*
 # Safety
 `cal` must be a live handle and `path` a NUL-terminated string.
 */
enum SpcvmStatus spcvm_calibration_save(const struct SpcvmCalibration *cal, const char *path);

/*
 # Safety
 `cal` must be null or a handle not yet freed.
 */
void spcvm_calibration_free(struct SpcvmCalibration *cal);

/*
 Scale of the approximating chi-square; NaN for a null handle.

 # Safety
 `cal` must be null or a live handle.
 */
double spcvm_calibration_a(const struct SpcvmCalibration *cal);

/*
 Degrees of freedom of the approximating chi-square; NaN for a null handle.

 # Safety
 `cal` must be null or a live handle.
 */
double spcvm_calibration_nu(const struct SpcvmCalibration *cal);

/*
 Effective sample size of the kernel weights; NaN for a null handle.

 # Safety
 `cal` must be null or a live handle.
 */
double spcvm_calibration_eff_n(const struct SpcvmCalibration *cal);

/*
 Expected data shape `(k, n_sites, p)`.

 # Safety
 `cal` must be a live handle; the out pointers must be writable.
 */
enum SpcvmStatus spcvm_calibration_shape(const struct SpcvmCalibration *cal,
                                         size_t *k,
                                         size_t *n_sites,
                                         size_t *p);

/*
 Runs the test. `values` holds `k * n_sites * p` numbers ordered field,
 then site (x fastest), then variable.

 # Safety
 `cal` must be a live handle, `values` must point to `k * n_sites * p`
 readable doubles and `out` must be writable.
 */
enum SpcvmStatus spcvm_run_test(const struct SpcvmCalibration *cal,
                                const double *values,
                                size_t k,
                                size_t n_sites,
                                size_t p,
                                struct SpcvmTestResult *out);

/*
 `P(Z <= upper)` for `Z ~ N(0, corr)`, `corr` a row-major `dim * dim`
 correlation matrix, `1 <= dim <= 4`.

 # Safety
 `upper` must hold `dim` doubles, `corr` `dim * dim` doubles, and `out`
 must be writable.
 */
enum SpcvmStatus spcvm_mvn_cdf(size_t dim,
                               const double *upper,
                               const double *corr,
                               double tol,
                               uint64_t seed,
                               double *out);

/*
 Upper tail of the chi-square distribution with `nu` degrees of freedom.

 # Safety
 `out` must be writable.
 */
enum SpcvmStatus spcvm_chi2_survival(double x, double nu, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPATIAL_CVM_H */
