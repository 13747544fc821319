/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef BDSDE_H
#define BDSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BDSDE_METRIC_POINT_AT_X0 0

#define BDSDE_METRIC_GRID_L2 1

#define BDSDE_MILSTEIN_COMPLETE 0

#define BDSDE_MILSTEIN_Y_ONLY 1

#define BDSDE_TERMINAL_Z_FINITE_DIFFERENCE 0

#define BDSDE_TERMINAL_Z_EXACT 1

/**
 * Result code of every call.
 */
typedef enum BdsdeStatus {
  BDSDE_STATUS_OK = 0,
  BDSDE_STATUS_INVALID_ARGUMENT = 1,
  BDSDE_STATUS_NON_FINITE = 2,
  BDSDE_STATUS_SOLVER = 3,
  BDSDE_STATUS_SAMPLE = 4,
  BDSDE_STATUS_CONFIG = 5,
  BDSDE_STATUS_IO = 6,
  BDSDE_STATUS_NULL_POINTER = 7,
  BDSDE_STATUS_PANIC = 8,
} BdsdeStatus;

/**
 * Opaque problem handle.
 */
typedef struct BdsdeProblem BdsdeProblem;

/**
 * Opaque convergence report handle.
 */
typedef struct BdsdeReport BdsdeReport;

/**
 * Parameters of the built-in problem families.
 */
typedef struct BdsdeFamilyParams {
  double horizon;
  double x0;
  double slope;
  double intercept;
  double noise;
} BdsdeFamilyParams;

/**
 * Study settings. `grid_radius <= 0` selects the default radius.
 */
typedef struct BdsdeStudyConfig {
  size_t samples;
  uint64_t seed;
  size_t gh_order;
  size_t grid_count;
  double grid_radius;
  /**
   * One of the `BDSDE_METRIC_*` constants.
   */
  uint32_t metric;
  /**
   * One of the `BDSDE_MILSTEIN_*` constants.
   */
  uint32_t milstein;
  /**
   * One of the `BDSDE_TERMINAL_Z_*` constants.
   */
  uint32_t terminal_z;
} BdsdeStudyConfig;

/**
 * Errors at one time-step count. `n` is the number of steps.
 */
typedef struct BdsdeLevelErrors {
  size_t n;
  double dt;
  double err_y_tilde;
  double err_y;
  double err_z;
} BdsdeLevelErrors;

/**
 * Fitted rates; NaN when a rate is undefined.
 */
typedef struct BdsdeRates {
  double y_tilde;
  double y;
  double z;
} BdsdeRates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *bdsde_last_error_message(void);

/**
 * Default family parameters: horizon 1, x0 0, slope 1, intercept 0, noise 0.
 */
struct BdsdeFamilyParams bdsde_family_params_default(void);

/**
 * Default study settings: 300 samples, seed 42, 8 Gauss-Hermite nodes,
 * 257 grid nodes, default radius.
 */
struct BdsdeStudyConfig bdsde_study_config_default(void);

/**
 * Builds a named problem. `params` may be null for the defaults.
 *
 * # Safety
 * `name` must be a NUL-terminated string, `params` null or valid, and
 * `out_problem` a valid pointer to write the handle to.
 */
enum BdsdeStatus bdsde_problem_new(const char *name,
                                   const struct BdsdeFamilyParams *params,
                                   struct BdsdeProblem **out_problem);

/**
 * Releases a problem. Null is ignored.
 *
 * # Safety
 * `problem` must come from [`bdsde_problem_new`] and not be freed twice.
 */
void bdsde_problem_free(struct BdsdeProblem *problem);

/**
 * Runs a convergence study over `n_len` step counts.
 *
 * # Safety
 * `problem` must be a live handle, `n_list` must point to `n_len` values,
 * `config` null (defaults) or valid, and `out_report` writable.
 */
enum BdsdeStatus bdsde_convergence_study(const struct BdsdeProblem *problem,
                                         const size_t *n_list,
                                         size_t n_len,
                                         const struct BdsdeStudyConfig *config,
                                         struct BdsdeReport **out_report);

/**
 * Number of step counts in a report; 0 for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t bdsde_report_level_count(const struct BdsdeReport *report);

/**
 * Copies the errors at position `index` into `out_level`.
 *
 * # Safety
 * `report` must be a live handle and `out_level` writable.
 */
enum BdsdeStatus bdsde_report_level(const struct BdsdeReport *report,
                                    size_t index,
                                    struct BdsdeLevelErrors *out_level);

/**
 * Copies the fitted rates into `out_rates`, NaN where undefined.
 *
 * # Safety
 * `report` must be a live handle and `out_rates` writable.
 */
enum BdsdeStatus bdsde_report_rates(const struct BdsdeReport *report, struct BdsdeRates *out_rates);

/**
 * Renders the report as CSV. Release the string with [`bdsde_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out_csv` writable.
 */
enum BdsdeStatus bdsde_report_csv(const struct BdsdeReport *report, char **out_csv);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void bdsde_string_free(char *s);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from [`bdsde_convergence_study`] and not be freed twice.
 */
void bdsde_report_free(struct BdsdeReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BDSDE_H */
