#ifndef LEVITRAP_H
#define LEVITRAP_H

/* Generated by cbindgen from levitrap-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum LevStatus {
  LEV_STATUS_OK = 0,
  /**
   * A precondition on the inputs was violated.
   */
  LEV_STATUS_INVALID_INPUT = 1,
  /**
   * The configuration is outside the supported (underdamped) regime.
   */
  LEV_STATUS_UNSUPPORTED_REGIME = 2,
  /**
   * A configuration file failed validation.
   */
  LEV_STATUS_INVALID_CONFIG = 3,
  /**
   * A nonlinear fit did not converge.
   */
  LEV_STATUS_FIT_FAILED = 4,
  /**
   * A file could not be parsed.
   */
  LEV_STATUS_PARSE_ERROR = 5,
  /**
   * An I/O operation failed.
   */
  LEV_STATUS_IO_ERROR = 6,
  /**
   * A required pointer argument was NULL.
   */
  LEV_STATUS_NULL_POINTER = 7,
  /**
   * An internal panic was caught at the boundary.
   */
  LEV_STATUS_PANIC = 8,
} LevStatus;

/**
 * Particle shape selector for the damping and collision models.
 */
typedef enum LevShape {
  LEV_SHAPE_SPHERE = 0,
  LEV_SHAPE_DUMBBELL = 1,
} LevShape;

/**
 * Opaque parsed scenario.
 */
typedef struct LevScenario LevScenario;

/**
 * Opaque simulated trajectory.
 */
typedef struct LevTrace LevTrace;

/**
 * Trap and gas environment (C mirror of the library type).
 */
typedef struct LevEnvironment {
  double pressure_mbar;
  double gas_temp_k;
  double gas_molecule_mass_kg;
  double f_z_hz;
  double electrode_distance_m;
  double electrode_resistivity_ohm_m;
} LevEnvironment;

/**
 * Particle parameters (C mirror of the library type).
 */
typedef struct LevParticle {
  double mass_kg;
  double radius_m;
  int64_t charge_e;
  enum LevShape shape;
  double accommodation;
  double surface_temp_k;
} LevParticle;

/**
 * Noise-budget output block. `has_charge` is 0 when the particle is
 * neutral, in which case the field/voltage entries are undefined.
 */
typedef struct LevNoiseBudget {
  double phonon_rate;
  double force_noise_n2_hz;
  double efield_noise_v2m2_hz;
  double voltage_noise_v_sqrt_hz;
  double displacement_noise_m2_hz;
  int32_t has_charge;
} LevNoiseBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the thread-local message for the most recent error.
 */
const char *lev_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lev_version(void);

/**
 * Mean thermal speed of the gas molecules (m/s).
 *
 * # Safety
 * `env` and `out_speed` must be valid for reads/writes.
 */
enum LevStatus lev_mean_gas_speed(const struct LevEnvironment *env, double *out_speed);

/**
 * Free-molecular-flow damping coefficient a_th (Hz/mbar).
 *
 * # Safety
 * All pointers must be valid.
 */
enum LevStatus lev_damping_coefficient(const struct LevParticle *particle,
                                       const struct LevEnvironment *env,
                                       double *out_a_hz_per_mbar);

/**
 * Quality factor Q = Ω_z/γ and the Q·f_z product (Hz).
 *
 * # Safety
 * All pointers must be valid.
 */
enum LevStatus lev_quality_factor(double gamma_rad_s,
                                  const struct LevEnvironment *env,
                                  double *out_q,
                                  double *out_qf_hz);

/**
 * Gas heating rate k_B·T_0·γ/(ħ·Ω_z) in phonons/s.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LevStatus lev_gas_heating_rate(double gamma_rad_s,
                                    const struct LevEnvironment *env,
                                    double *out_phonons_per_s);

/**
 * Converts a phonon heating rate into the equivalent noise densities.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LevStatus lev_noise_budget(double phonon_rate,
                                const struct LevParticle *particle,
                                const struct LevEnvironment *env,
                                struct LevNoiseBudget *out);

/**
 * Thermally limited Allan deviation 1/√(Q·Ω_z·τ).
 *
 * # Safety
 * All pointers must be valid.
 */
enum LevStatus lev_thermal_allan_limit(double quality_factor,
                                       const struct LevEnvironment *env,
                                       double tau_s,
                                       double *out_sigma);

/**
 * Weighted log-space ring-down fit; writes γ (rad/s), its 1σ, and the
 * fitted initial squared amplitude.
 *
 * # Safety
 * `times` and `squared_amplitudes` must point to `n` readable doubles.
 */
enum LevStatus lev_ringdown_fit(const double *times,
                                const double *squared_amplitudes,
                                uintptr_t n,
                                double amp_uncertainty_m,
                                double *out_gamma,
                                double *out_gamma_sigma,
                                double *out_z0_squared);

/**
 * Non-overlapping Allan deviation of a uniformly sampled frequency record.
 * `out_sigma[i]` receives σ(τ_i), or NaN when τ_i leaves fewer than two
 * intervals.
 *
 * # Safety
 * `samples` must hold `n` doubles; `taus`/`out_sigma` must hold `n_taus`.
 */
enum LevStatus lev_allan_deviation(const double *samples,
                                   uintptr_t n,
                                   double dt_s,
                                   double nominal_frequency_hz,
                                   const double *taus,
                                   uintptr_t n_taus,
                                   double *out_sigma);

/**
 * Parses and validates a scenario TOML string into an opaque handle.
 *
 * # Safety
 * `config_toml` must be a valid NUL-terminated string; `out` must be a
 * valid pointer. The returned handle must be released with
 * [`lev_scenario_free`].
 */
enum LevStatus lev_scenario_new(const char *config_toml, struct LevScenario **out);

/**
 * Releases a scenario handle.
 *
 * # Safety
 * `scenario` must have come from [`lev_scenario_new`] (or be NULL) and must
 * not be used afterwards.
 */
void lev_scenario_free(struct LevScenario *scenario);

/**
 * Simulates one trajectory of the scenario's dynamics (seed from the file,
 * optionally overridden) and returns an opaque trace handle.
 *
 * # Safety
 * `scenario` must be a live handle from [`lev_scenario_new`]; `out` must be
 * valid. The trace must be released with [`lev_trace_free`].
 */
enum LevStatus lev_scenario_simulate(const struct LevScenario *scenario,
                                     int32_t use_seed_override,
                                     uint64_t seed_override,
                                     struct LevTrace **out);

/**
 * Runs the scenario's full pipeline and returns the plain-text report as a
 * newly allocated string (release with [`lev_string_free`]).
 *
 * # Safety
 * `scenario` must be a live handle; `out_report` must be valid.
 */
enum LevStatus lev_scenario_run(const struct LevScenario *scenario,
                                int32_t use_seed_override,
                                uint64_t seed_override,
                                char **out_report);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by a `lev_*` function (or be NULL) and must
 * not be used afterwards.
 */
void lev_string_free(char *s);

/**
 * Number of samples in a trace.
 *
 * # Safety
 * `trace` must be a live handle.
 */
uintptr_t lev_trace_len(const struct LevTrace *trace);

/**
 * Sample interval of a trace (s).
 *
 * # Safety
 * `trace` must be a live handle.
 */
double lev_trace_dt(const struct LevTrace *trace);

/**
 * Borrowed pointer to the position samples (m); valid while the trace
 * handle lives.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *lev_trace_positions(const struct LevTrace *trace);

/**
 * Borrowed pointer to the velocity samples (m/s).
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *lev_trace_velocities(const struct LevTrace *trace);

/**
 * Whether sample `i` was recorded during an illumination window.
 *
 * # Safety
 * `trace` must be a live handle.
 */
int32_t lev_trace_is_lit(const struct LevTrace *trace, uintptr_t i);

/**
 * Releases a trace handle.
 *
 * # Safety
 * `trace` must have come from this library (or be NULL) and must not be
 * used afterwards.
 */
void lev_trace_free(struct LevTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEVITRAP_H */
