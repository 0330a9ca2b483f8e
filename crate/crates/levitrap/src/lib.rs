//! Simulation and estimation toolkit for a levitated charged nanoparticle
//! oscillator in a Paul trap.
//!
//! The crate simulates the 1-D secular motion of a trapped nanoparticle
//! under gas damping, thermal and technical force noise, feedback cold
//! damping, and resonant driving; synthesizes the two detection channels
//! (APD voltage traces and time-integrated camera intensity profiles); and
//! implements the estimators that turn measurements into damping rates,
//! heating rates, noise budgets, and frequency-stability figures.
//!
//! Modules:
//! - [`physics`]: closed-form kinetic theory and the noise-budget chain.
//! - [`dynamics`]: exact-transition stochastic integrator and ensembles.
//! - [`detection`]: APD calibration and the camera profile model.
//! - [`analysis`]: ring-down/ring-up/heating fits and the γ–P regression.
//! - [`spectral`]: Allan deviation, PLL frequency extraction, PSD.
//! - [`scenario`]: declarative experiment configs and the pipeline runner.
//! - [`report`]: reference-value registry and the reproduction report.

pub mod analysis;
pub mod constants;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod io;
pub mod physics;
pub mod report;
pub mod scenario;
pub mod spectral;
pub mod trace;
pub mod units;

pub use error::{Error, Result};
