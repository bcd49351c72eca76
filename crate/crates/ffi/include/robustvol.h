#ifndef ROBUSTVOL_H
#define ROBUSTVOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RvStatus {
  RV_STATUS_OK = 0,
  RV_STATUS_NULL_POINTER = 1,
  RV_STATUS_INVALID_UTF8 = 2,
  /**
   * Schema or parameter validation failed.
   */
  RV_STATUS_INVALID_INPUT = 3,
  /**
   * The computation does not apply to this scenario.
   */
  RV_STATUS_CONFIGURATION = 4,
  /**
   * An argument is outside the function's domain.
   */
  RV_STATUS_DOMAIN = 5,
  /**
   * Blow-up, quadrature, series or model-breakdown failure.
   */
  RV_STATUS_NUMERICAL = 6,
  RV_STATUS_PANIC = 7,
} RvStatus;

/**
 * Opaque scenario handle.
 */
typedef struct RvScenario RvScenario;

typedef struct RvExposures {
  double beta_s[2];
  double beta_v[2];
  /**
   * NaN without jumps.
   */
  double beta_n;
} RvExposures;

typedef struct RvWorstCase {
  double e_s[2];
  double e_v[2];
} RvWorstCase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rv_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rv_last_error_message(char *buf, size_t len);

/**
 * Parses and validates a TOML scenario document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be a valid pointer.
 * The handle must be released with `rv_scenario_free`.
 */
enum RvStatus rv_scenario_from_toml(const char *toml, struct RvScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from `rv_scenario_from_toml` not yet freed.
 */
void rv_scenario_free(struct RvScenario *scenario);

/**
 * Sets a named scalar parameter (e.g. `phi_s1`, `kappa2`, `T`) and revalidates.
 * On failure the scenario is unchanged.
 *
 * # Safety
 * Valid handle and NUL-terminated `name`.
 */
enum RvStatus rv_scenario_set_param(struct RvScenario *scenario, const char *name, double value);

/**
 * # Safety
 * Valid handle, NUL-terminated `name`, valid `out`.
 */
enum RvStatus rv_scenario_get_param(const struct RvScenario *scenario,
                                    const char *name,
                                    double *out);

/**
 * Optimal exposures at time-to-horizon `tau`; uses the jump model when the
 * scenario has a jump section.
 *
 * # Safety
 * Valid handle and `out`.
 */
enum RvStatus rv_optimal_exposures(const struct RvScenario *scenario,
                                   double tau,
                                   struct RvExposures *out);

/**
 * Worst-case drift distortions at `tau` and variances `(v1, v2)`.
 *
 * # Safety
 * Valid handle and `out`.
 */
enum RvStatus rv_worst_case(const struct RvScenario *scenario,
                            double tau,
                            double v1,
                            double v2,
                            struct RvWorstCase *out);

/**
 * Indirect utility `J` at time-to-horizon `tau`, wealth `x`, variances `(v1, v2)`.
 *
 * # Safety
 * Valid handle and `out`.
 */
enum RvStatus rv_value(const struct RvScenario *scenario,
                       double tau,
                       double x,
                       double v1,
                       double v2,
                       double *out);

/**
 * Wealth-equivalent utility loss of `strategy` (`pi1`, `pi2`, `pi3`, `jump-ignore`).
 *
 * # Safety
 * Valid handle, NUL-terminated `strategy`, valid `out`.
 */
enum RvStatus rv_utility_loss(const struct RvScenario *scenario, const char *strategy, double *out);

/**
 * Detection-error probability with default quadrature settings.
 *
 * # Safety
 * Valid handle and `out`.
 */
enum RvStatus rv_detection_error(const struct RvScenario *scenario, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUSTVOL_H */
