#ifndef PKGEE_H
#define PKGEE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of regression coefficients in a fit.
 */
#define PKGEE_NUM_COEFFICIENTS 12

typedef enum PkgeeStatus {
  PKGEE_STATUS_OK = 0,
  PKGEE_STATUS_NULL_POINTER = 1,
  PKGEE_STATUS_INVALID_ARGUMENT = 2,
  PKGEE_STATUS_EVAL_FAILURE = 3,
  PKGEE_STATUS_NOT_CONVERGED = 4,
  PKGEE_STATUS_SINGULAR_INFORMATION = 5,
  PKGEE_STATUS_NOT_ESTIMABLE = 6,
  PKGEE_STATUS_LEVERAGE_SINGULAR = 7,
  PKGEE_STATUS_INTERNAL = 99,
} PkgeeStatus;

/**
 * Subjects accumulated for one fit.
 */
typedef struct PkgeeDataset PkgeeDataset;

/**
 * A converged fit.
 */
typedef struct PkgeeFit PkgeeFit;

/**
 * Result of a Wald (`df_numerator == 1`) or F test.
 */
typedef struct PkgeeTestResult {
  double statistic;
  double df_numerator;
  double df_denominator;
  double p_value;
  /**
   * Denominator d.f. at or below 2.
   */
  bool low_df;
} PkgeeTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *pkgee_last_error_message(void);

/**
 * Creates an empty dataset. Free it with `pkgee_dataset_free`.
 */
struct PkgeeDataset *pkgee_dataset_new(void);

/**
 * # Safety
 * `ds` must be null or a pointer returned by `pkgee_dataset_new` that has
 * not been freed.
 */
void pkgee_dataset_free(struct PkgeeDataset *ds);

/**
 * Number of subjects added so far; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t pkgee_dataset_len(const struct PkgeeDataset *ds);

/**
 * Adds one subject. `conc` holds natural-scale concentrations (> 0) at the
 * strictly increasing, positive `times`; `genotype` is the minor-allele
 * count 0, 1 or 2.
 *
 * # Safety
 * `ds` must be a live dataset handle, `id` a NUL-terminated string, and
 * `times` and `conc` must each point to `n` readable doubles.
 */
enum PkgeeStatus pkgee_dataset_add_subject(struct PkgeeDataset *ds,
                                           const char *id,
                                           double dose,
                                           double t_in,
                                           int32_t genotype,
                                           const double *times,
                                           const double *conc,
                                           size_t n);

/**
 * Solves the estimating equations with default settings. On success
 * `*out` receives a handle to free with `pkgee_fit_free`.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a writable pointer.
 */
enum PkgeeStatus pkgee_fit(const struct PkgeeDataset *ds, struct PkgeeFit **out);

/**
 * # Safety
 * `fit` must be null or a live fit handle.
 */
void pkgee_fit_free(struct PkgeeFit *fit);

/**
 * Copies the twelve coefficients into `out`; dropped coefficients are NaN.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` must point to 12 writable
 * doubles.
 */
enum PkgeeStatus pkgee_fit_coefficients(const struct PkgeeFit *fit, double *out);

/**
 * Solver iterations used; 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live fit handle.
 */
size_t pkgee_fit_iterations(const struct PkgeeFit *fit);

/**
 * Wald test of coefficient `coef` (0-11). `variance_kind` is 0 for the
 * plain sandwich and 1 for the bias-corrected one.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` a writable pointer.
 */
enum PkgeeStatus pkgee_fit_wald(const struct PkgeeFit *fit,
                                size_t coef,
                                int32_t variance_kind,
                                struct PkgeeTestResult *out);

/**
 * Joint F test of both genotype effects on one PK parameter
 * (0 Vd, 1 Kel, 2 K12, 3 K21).
 *
 * # Safety
 * `fit` must be a live fit handle and `out` a writable pointer.
 */
enum PkgeeStatus pkgee_fit_f(const struct PkgeeFit *fit,
                             int32_t parameter,
                             int32_t variance_kind,
                             struct PkgeeTestResult *out);

/**
 * Model concentration at time `t` for log-scale parameters.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum PkgeeStatus pkgee_concentration(double log_vd,
                                     double log_kel,
                                     double log_k12,
                                     double log_k21,
                                     double dose,
                                     double t_in,
                                     double t,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PKGEE_H */
