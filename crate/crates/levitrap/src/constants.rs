//! Physical constants (SI units) and unit-conversion factors.

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054571817e-34;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;

/// Pascal per millibar. Pressures are SI (Pa) internally; mbar appears
/// only at interface boundaries.
pub const PA_PER_MBAR: f64 = 100.0;

/// Mass of a hydrogen molecule (kg), the dominant residual gas in UHV.
pub const H2_MOLECULE_MASS: f64 = 3.34e-27;

/// Room temperature (K) used as the default thermalization temperature.
pub const ROOM_TEMPERATURE: f64 = 300.0;
