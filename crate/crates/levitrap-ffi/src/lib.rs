//! C ABI for the levitrap toolkit.
//!
//! Conventions:
//! - Every fallible function returns a [`LevStatus`] and writes results
//!   through out-pointers; `LEV_STATUS_OK` (0) means success.
//! - [`lev_last_error_message`] returns a thread-local, NUL-terminated
//!   description of the most recent failure on the calling thread; the
//!   pointer stays valid until the next failing call on that thread.
//! - Simulations and traces are opaque handles created by `lev_*_new` /
//!   returned by `lev_*_run` and released by the matching `lev_*_free`.
//!   Passing NULL to a free function is a no-op.
//! - Array parameters are `(pointer, length)` pairs; the memory is borrowed
//!   for the duration of the call only.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use levitrap::analysis;
use levitrap::dynamics::{simulate_trajectory, Trajectory};
use levitrap::error::Error;
use levitrap::physics::{self, Environment, ParticleShape, ParticleSpec, Uncertain};
use levitrap::scenario::{run_scenario, Scenario};
use levitrap::spectral;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevStatus {
    Ok = 0,
    /// A precondition on the inputs was violated.
    InvalidInput = 1,
    /// The configuration is outside the supported (underdamped) regime.
    UnsupportedRegime = 2,
    /// A configuration file failed validation.
    InvalidConfig = 3,
    /// A nonlinear fit did not converge.
    FitFailed = 4,
    /// A file could not be parsed.
    ParseError = 5,
    /// An I/O operation failed.
    IoError = 6,
    /// A required pointer argument was NULL.
    NullPointer = 7,
    /// An internal panic was caught at the boundary.
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> LevStatus {
    match err {
        Error::InvalidInput(_) => LevStatus::InvalidInput,
        Error::UnsupportedRegime(_) => LevStatus::UnsupportedRegime,
        Error::Config(_) => LevStatus::InvalidConfig,
        Error::FitFailure { .. } => LevStatus::FitFailed,
        Error::Parse { .. } => LevStatus::ParseError,
        Error::Io(_) => LevStatus::IoError,
    }
}

fn guard<F: FnOnce() -> Result<(), (LevStatus, String)>>(f: F) -> LevStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LevStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in levitrap".into());
            set_error(&msg);
            LevStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (LevStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(what: &str) -> (LevStatus, String) {
    (LevStatus::NullPointer, format!("{what} must not be NULL"))
}

/// Returns the thread-local message for the most recent error.
#[no_mangle]
pub extern "C" fn lev_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lev_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Particle shape selector for the damping and collision models.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevShape {
    Sphere = 0,
    Dumbbell = 1,
}

/// Particle parameters (C mirror of the library type).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LevParticle {
    pub mass_kg: f64,
    pub radius_m: f64,
    pub charge_e: i64,
    pub shape: LevShape,
    pub accommodation: f64,
    pub surface_temp_k: f64,
}

/// Trap and gas environment (C mirror of the library type).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LevEnvironment {
    pub pressure_mbar: f64,
    pub gas_temp_k: f64,
    pub gas_molecule_mass_kg: f64,
    pub f_z_hz: f64,
    pub electrode_distance_m: f64,
    pub electrode_resistivity_ohm_m: f64,
}

/// Noise-budget output block. `has_charge` is 0 when the particle is
/// neutral, in which case the field/voltage entries are undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LevNoiseBudget {
    pub phonon_rate: f64,
    pub force_noise_n2_hz: f64,
    pub efield_noise_v2m2_hz: f64,
    pub voltage_noise_v_sqrt_hz: f64,
    pub displacement_noise_m2_hz: f64,
    pub has_charge: i32,
}

fn particle_of(p: &LevParticle) -> ParticleSpec {
    ParticleSpec {
        mass: p.mass_kg,
        nominal_radius: p.radius_m,
        charge_e: p.charge_e,
        shape: match p.shape {
            LevShape::Sphere => ParticleShape::Sphere,
            LevShape::Dumbbell => ParticleShape::Dumbbell,
        },
        accommodation: p.accommodation,
        surface_temperature: p.surface_temp_k,
    }
}

fn environment_of(e: &LevEnvironment) -> Environment {
    Environment {
        pressure_mbar: e.pressure_mbar,
        gas_temperature: e.gas_temp_k,
        gas_molecule_mass: e.gas_molecule_mass_kg,
        secular_frequency: e.f_z_hz,
        electrode_distance: e.electrode_distance_m,
        electrode_resistivity: e.electrode_resistivity_ohm_m,
    }
}

/// Mean thermal speed of the gas molecules (m/s).
///
/// # Safety
/// `env` and `out_speed` must be valid for reads/writes.
#[no_mangle]
pub unsafe extern "C" fn lev_mean_gas_speed(
    env: *const LevEnvironment,
    out_speed: *mut f64,
) -> LevStatus {
    guard(|| {
        if env.is_null() || out_speed.is_null() {
            return Err(null_err("env/out_speed"));
        }
        let v = physics::mean_gas_speed(&environment_of(&*env)).map_err(lib_err)?;
        *out_speed = v;
        Ok(())
    })
}

/// Free-molecular-flow damping coefficient a_th (Hz/mbar).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lev_damping_coefficient(
    particle: *const LevParticle,
    env: *const LevEnvironment,
    out_a_hz_per_mbar: *mut f64,
) -> LevStatus {
    guard(|| {
        if particle.is_null() || env.is_null() || out_a_hz_per_mbar.is_null() {
            return Err(null_err("particle/env/out"));
        }
        let a = physics::gas_damping_coefficient(&particle_of(&*particle), &environment_of(&*env))
            .map_err(lib_err)?;
        *out_a_hz_per_mbar = a;
        Ok(())
    })
}

/// Quality factor Q = Ω_z/γ and the Q·f_z product (Hz).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lev_quality_factor(
    gamma_rad_s: f64,
    env: *const LevEnvironment,
    out_q: *mut f64,
    out_qf_hz: *mut f64,
) -> LevStatus {
    guard(|| {
        if env.is_null() || out_q.is_null() || out_qf_hz.is_null() {
            return Err(null_err("env/out_q/out_qf"));
        }
        let (q, qf) = physics::quality_factor(Uncertain::exact(gamma_rad_s), &environment_of(&*env))
            .map_err(lib_err)?;
        *out_q = q.value;
        *out_qf_hz = qf.value;
        Ok(())
    })
}

/// Gas heating rate k_B·T_0·γ/(ħ·Ω_z) in phonons/s.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lev_gas_heating_rate(
    gamma_rad_s: f64,
    env: *const LevEnvironment,
    out_phonons_per_s: *mut f64,
) -> LevStatus {
    guard(|| {
        if env.is_null() || out_phonons_per_s.is_null() {
            return Err(null_err("env/out"));
        }
        let rate =
            physics::gas_heating_rate(gamma_rad_s, &environment_of(&*env)).map_err(lib_err)?;
        *out_phonons_per_s = rate;
        Ok(())
    })
}

/// Converts a phonon heating rate into the equivalent noise densities.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lev_noise_budget(
    phonon_rate: f64,
    particle: *const LevParticle,
    env: *const LevEnvironment,
    out: *mut LevNoiseBudget,
) -> LevStatus {
    guard(|| {
        if particle.is_null() || env.is_null() || out.is_null() {
            return Err(null_err("particle/env/out"));
        }
        let b = physics::noise_budget(phonon_rate, &particle_of(&*particle), &environment_of(&*env))
            .map_err(lib_err)?;
        *out = LevNoiseBudget {
            phonon_rate: b.phonon_rate,
            force_noise_n2_hz: b.force_noise,
            efield_noise_v2m2_hz: b.efield_noise.unwrap_or(f64::NAN),
            voltage_noise_v_sqrt_hz: b.voltage_noise.unwrap_or(f64::NAN),
            displacement_noise_m2_hz: b.displacement_noise,
            has_charge: i32::from(b.efield_noise.is_some()),
        };
        Ok(())
    })
}

/// Thermally limited Allan deviation 1/√(Q·Ω_z·τ).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lev_thermal_allan_limit(
    quality_factor: f64,
    env: *const LevEnvironment,
    tau_s: f64,
    out_sigma: *mut f64,
) -> LevStatus {
    guard(|| {
        if env.is_null() || out_sigma.is_null() {
            return Err(null_err("env/out"));
        }
        let s = physics::thermal_allan_limit(quality_factor, &environment_of(&*env), tau_s)
            .map_err(lib_err)?;
        *out_sigma = s;
        Ok(())
    })
}

/// Weighted log-space ring-down fit; writes γ (rad/s), its 1σ, and the
/// fitted initial squared amplitude.
///
/// # Safety
/// `times` and `squared_amplitudes` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn lev_ringdown_fit(
    times: *const f64,
    squared_amplitudes: *const f64,
    n: usize,
    amp_uncertainty_m: f64,
    out_gamma: *mut f64,
    out_gamma_sigma: *mut f64,
    out_z0_squared: *mut f64,
) -> LevStatus {
    guard(|| {
        if times.is_null() || squared_amplitudes.is_null() {
            return Err(null_err("times/squared_amplitudes"));
        }
        if out_gamma.is_null() || out_gamma_sigma.is_null() || out_z0_squared.is_null() {
            return Err(null_err("out pointers"));
        }
        let t = std::slice::from_raw_parts(times, n);
        let a2 = std::slice::from_raw_parts(squared_amplitudes, n);
        let fit = analysis::ringdown_fit(t, a2, amp_uncertainty_m).map_err(lib_err)?;
        *out_gamma = fit.value("gamma");
        *out_gamma_sigma = fit.sigma("gamma");
        *out_z0_squared = fit.value("z0_squared");
        Ok(())
    })
}

/// Non-overlapping Allan deviation of a uniformly sampled frequency record.
/// `out_sigma[i]` receives σ(τ_i), or NaN when τ_i leaves fewer than two
/// intervals.
///
/// # Safety
/// `samples` must hold `n` doubles; `taus`/`out_sigma` must hold `n_taus`.
#[no_mangle]
pub unsafe extern "C" fn lev_allan_deviation(
    samples: *const f64,
    n: usize,
    dt_s: f64,
    nominal_frequency_hz: f64,
    taus: *const f64,
    n_taus: usize,
    out_sigma: *mut f64,
) -> LevStatus {
    guard(|| {
        if samples.is_null() || taus.is_null() || out_sigma.is_null() {
            return Err(null_err("samples/taus/out_sigma"));
        }
        let data = std::slice::from_raw_parts(samples, n);
        let taus = std::slice::from_raw_parts(taus, n_taus);
        let points =
            spectral::allan_deviation_from_samples(data, dt_s, nominal_frequency_hz, taus)
                .map_err(lib_err)?;
        let out = std::slice::from_raw_parts_mut(out_sigma, n_taus);
        for (o, p) in out.iter_mut().zip(&points) {
            *o = p.sigma.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Opaque parsed scenario.
pub struct LevScenario {
    inner: Scenario,
}

/// Opaque simulated trajectory.
pub struct LevTrace {
    inner: Trajectory,
}

/// Parses and validates a scenario TOML string into an opaque handle.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string; `out` must be a
/// valid pointer. The returned handle must be released with
/// [`lev_scenario_free`].
#[no_mangle]
pub unsafe extern "C" fn lev_scenario_new(
    config_toml: *const c_char,
    out: *mut *mut LevScenario,
) -> LevStatus {
    guard(|| {
        if config_toml.is_null() || out.is_null() {
            return Err(null_err("config_toml/out"));
        }
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|e| (LevStatus::ParseError, format!("config is not UTF-8: {e}")))?;
        let scenario = Scenario::from_toml_str(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(LevScenario { inner: scenario }));
        Ok(())
    })
}

/// Releases a scenario handle.
///
/// # Safety
/// `scenario` must have come from [`lev_scenario_new`] (or be NULL) and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lev_scenario_free(scenario: *mut LevScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulates one trajectory of the scenario's dynamics (seed from the file,
/// optionally overridden) and returns an opaque trace handle.
///
/// # Safety
/// `scenario` must be a live handle from [`lev_scenario_new`]; `out` must be
/// valid. The trace must be released with [`lev_trace_free`].
#[no_mangle]
pub unsafe extern "C" fn lev_scenario_simulate(
    scenario: *const LevScenario,
    use_seed_override: i32,
    seed_override: u64,
    out: *mut *mut LevTrace,
) -> LevStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return Err(null_err("scenario/out"));
        }
        let cfg = (*scenario)
            .inner
            .sim_config((use_seed_override != 0).then_some(seed_override));
        let traj = simulate_trajectory(&cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(LevTrace { inner: traj }));
        Ok(())
    })
}

/// Runs the scenario's full pipeline and returns the plain-text report as a
/// newly allocated string (release with [`lev_string_free`]).
///
/// # Safety
/// `scenario` must be a live handle; `out_report` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lev_scenario_run(
    scenario: *const LevScenario,
    use_seed_override: i32,
    seed_override: u64,
    out_report: *mut *mut c_char,
) -> LevStatus {
    guard(|| {
        if scenario.is_null() || out_report.is_null() {
            return Err(null_err("scenario/out_report"));
        }
        let outcome = run_scenario(
            &(*scenario).inner,
            None,
            (use_seed_override != 0).then_some(seed_override),
        )
        .map_err(lib_err)?;
        let c = CString::new(outcome.report.replace('\0', " "))
            .unwrap_or_default();
        *out_report = c.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a `lev_*` function (or be NULL) and must
/// not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lev_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of samples in a trace.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lev_trace_len(trace: *const LevTrace) -> usize {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.len()
}

/// Sample interval of a trace (s).
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lev_trace_dt(trace: *const LevTrace) -> f64 {
    if trace.is_null() {
        return f64::NAN;
    }
    (*trace).inner.dt
}

/// Borrowed pointer to the position samples (m); valid while the trace
/// handle lives.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lev_trace_positions(trace: *const LevTrace) -> *const f64 {
    if trace.is_null() {
        return ptr::null();
    }
    (*trace).inner.z.as_ptr()
}

/// Borrowed pointer to the velocity samples (m/s).
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lev_trace_velocities(trace: *const LevTrace) -> *const f64 {
    if trace.is_null() {
        return ptr::null();
    }
    (*trace).inner.v.as_ptr()
}

/// Whether sample `i` was recorded during an illumination window.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lev_trace_is_lit(trace: *const LevTrace, i: usize) -> i32 {
    if trace.is_null() || i >= (*trace).inner.len() {
        return 0;
    }
    i32::from((&(*trace).inner.lit)[i])
}

/// Releases a trace handle.
///
/// # Safety
/// `trace` must have come from this library (or be NULL) and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lev_trace_free(trace: *mut LevTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
