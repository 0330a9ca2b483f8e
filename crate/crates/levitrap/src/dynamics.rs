//! Stochastic time-domain simulation of the 1-D secular motion
//! `z̈ + γ·ż + Ω_z²·z = F/m`.
//!
//! The integrator uses the exact Gaussian transition of the linear SDE:
//! the deterministic part advances through the closed-form damped-oscillator
//! propagator and the stochastic part is drawn from the exact process
//! covariance over the step. There is no discretization error, so the step
//! size is free to be much larger than the oscillation period whenever only
//! envelope statistics are needed — which is what makes hour-scale ring-downs
//! affordable.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};
use crate::physics::{Environment, ParticleSpec};
use crate::trace::{TimeTrace, Unit};

/// Oscillator phase-space state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscState {
    /// Position (m).
    pub z: f64,
    /// Velocity (m/s).
    pub v: f64,
    /// Time (s).
    pub t: f64,
}

impl OscState {
    pub fn at_rest() -> Self {
        OscState { z: 0.0, v: 0.0, t: 0.0 }
    }

    /// Amplitude of the oscillation envelope, `√(z² + (v/Ω)²)`.
    pub fn amplitude(&self, omega: f64) -> f64 {
        (self.z * self.z + (self.v / omega) * (self.v / omega)).sqrt()
    }

    /// Total mechanical energy `½·m·v² + ½·m·Ω²·z²` (J).
    pub fn energy(&self, mass: f64, omega: f64) -> f64 {
        0.5 * mass * (self.v * self.v + omega * omega * self.z * self.z)
    }
}

/// Stochastic force terms entering the equation of motion. All spectral
/// densities are one-sided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSource {
    /// Thermal bath at the given temperature; force PSD `4·k_B·T·m·γ_gas`
    /// tied to the gas damping channel (fluctuation-dissipation).
    Thermal { temperature: f64 },
    /// Extra white force noise with the given PSD (N²/Hz).
    WhiteForce { s_ff: f64 },
    /// Trap-center displacement noise with the given PSD (m²/Hz); enters as
    /// a force `m·Ω_z²·ξ(t)`.
    Displacement { s_zz: f64 },
}

/// Half-open activity window `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Window { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

fn validate_windows(windows: &[Window], what: &str, problems: &mut Vec<String>) {
    for w in windows {
        if !(w.end > w.start) {
            problems.push(format!(
                "{what} window [{}, {}) is empty or reversed",
                w.start, w.end
            ));
        }
    }
    for pair in windows.windows(2) {
        if pair[1].start < pair[0].end {
            problems.push(format!(
                "{what} windows [{}, {}) and [{}, {}) overlap or are unsorted",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            ));
        }
    }
}

/// Ideal cold damping: an extra velocity-proportional force that adds a
/// zero-temperature damping channel of rate `gain`. With a thermal bath at
/// `T_0` the steady mode temperature is `T_fb = T_0·γ/(γ + gain)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Additional velocity damping γ_fb (rad/s).
    pub gain: f64,
}

/// Sinusoidal drive force `F₀·sin(2π·f·t + φ)` applied along z.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Force amplitude F₀ (N).
    pub force_amplitude: f64,
    /// Drive frequency (Hz).
    pub frequency: f64,
    /// Phase at t = 0 (rad).
    pub phase: f64,
}

/// On/off schedule for feedback, drive, and illumination.
///
/// Empty window lists mean "always active" for feedback and drive (when the
/// corresponding config is present) and "always lit" for illumination.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub feedback: Vec<Window>,
    pub drive: Vec<Window>,
    pub illumination: Vec<Window>,
}

/// Initial condition of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialState {
    Rest,
    State { z: f64, v: f64 },
    /// Drawn from the thermal Gaussian at the given temperature.
    Thermal { temperature: f64 },
    /// Deterministic excitation: `z = A·sin(φ)`, `v = A·Ω·cos(φ)`.
    Amplitude { amplitude: f64, phase: f64 },
}

/// Full simulation configuration. A `(config, seed)` pair determines every
/// sample bit-exactly, independent of thread count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub particle: ParticleSpec,
    pub env: Environment,
    /// Gas damping rate γ (rad/s); derived from the free-molecular-flow
    /// coefficient at the environment pressure when absent.
    pub gamma: Option<f64>,
    /// Sample interval (s).
    pub dt: f64,
    /// Total simulated time (s).
    pub duration: f64,
    pub seed: u64,
    pub noise: Vec<NoiseSource>,
    pub controller: Option<FeedbackConfig>,
    pub drive: Option<DriveConfig>,
    #[serde(default)]
    pub schedule: Schedule,
    pub initial: InitialState,
}

impl SimConfig {
    /// Gas damping rate in rad/s (supplied or derived).
    pub fn gamma(&self) -> Result<f64> {
        match self.gamma {
            Some(g) => Ok(g),
            None => crate::physics::damping_rate(&self.particle, &self.env),
        }
    }

    /// Total one-sided force PSD of all stochastic sources (N²/Hz).
    pub fn total_force_psd(&self) -> Result<f64> {
        let gamma = self.gamma()?;
        let m = self.particle.mass;
        let omega = self.env.omega_z();
        let mut s = 0.0;
        for n in &self.noise {
            s += match *n {
                NoiseSource::Thermal { temperature } => {
                    4.0 * BOLTZMANN * temperature * m * gamma
                }
                NoiseSource::WhiteForce { s_ff } => s_ff,
                NoiseSource::Displacement { s_zz } => {
                    let k = m * omega * omega;
                    k * k * s_zz
                }
            };
        }
        Ok(s)
    }

    pub fn n_samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::Config(p)) = self.particle.validate() {
            problems.extend(p);
        }
        if let Err(Error::Config(p)) = self.env.validate() {
            problems.extend(p);
        }
        if !(self.dt > 0.0) {
            problems.push(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.duration >= self.dt) {
            problems.push(format!(
                "duration ({}) must be at least one step ({})",
                self.duration, self.dt
            ));
        }
        if let Some(fb) = &self.controller {
            if fb.gain < 0.0 {
                problems.push(format!("feedback gain must be >= 0, got {}", fb.gain));
            }
        }
        if let Some(d) = &self.drive {
            if d.force_amplitude < 0.0 {
                problems.push(format!(
                    "drive force amplitude must be >= 0, got {}",
                    d.force_amplitude
                ));
            }
        }
        validate_windows(&self.schedule.feedback, "feedback", &mut problems);
        validate_windows(&self.schedule.drive, "drive", &mut problems);
        validate_windows(&self.schedule.illumination, "illumination", &mut problems);
        if let Ok(g) = self.gamma() {
            if g < 0.0 {
                problems.push(format!("gamma must be >= 0, got {g}"));
            }
            let omega = self.env.omega_z();
            let gain = self.controller.as_ref().map_or(0.0, |f| f.gain);
            if g + gain >= 2.0 * omega {
                problems.push(format!(
                    "overdamped: gamma + feedback gain ({}) >= 2·Ω_z ({})",
                    g + gain,
                    2.0 * omega
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Closed-form transition matrix of the damped oscillator over `dt`.
fn transition(gamma: f64, omega: f64, dt: f64) -> Result<[f64; 4]> {
    if gamma < 0.0 {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    let w2 = omega * omega - 0.25 * gamma * gamma;
    if !(w2 > 0.0) {
        return Err(Error::UnsupportedRegime(format!(
            "overdamped oscillator (gamma = {gamma}, omega = {omega}); only gamma < 2·omega is supported"
        )));
    }
    let w = w2.sqrt();
    let e = (-0.5 * gamma * dt).exp();
    let (s, c) = (w * dt).sin_cos();
    let m11 = e * (c + 0.5 * gamma / w * s);
    let m12 = e * s / w;
    let m21 = -omega * omega * m12;
    let m22 = e * (c - 0.5 * gamma / w * s);
    Ok([m11, m12, m21, m22])
}

/// Exact covariance of the stochastic increment over `dt` for acceleration
/// noise of two-sided intensity `q` (i.e. `⟨a(t)a(t')⟩ = q·δ(t−t')`).
fn step_covariance(gamma: f64, omega: f64, dt: f64, q: f64) -> (f64, f64, f64) {
    if q == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let c = gamma;
    let w2 = omega * omega - 0.25 * gamma * gamma;
    let w = w2.sqrt();
    let e = (-c * dt).exp();
    let j0 = if c > 0.0 { -(-c * dt).exp_m1() / c } else { dt };
    let (s2, c2) = (2.0 * w * dt).sin_cos();
    let den = c * c + 4.0 * w2;
    let a_re = 1.0 - e * c2;
    let b_im = -e * s2;
    let jc = (a_re * c - 2.0 * w * b_im) / den;
    let js = (2.0 * w * a_re + c * b_im) / den;
    let sin_wdt = (w * dt).sin();
    let szz = q * (j0 - jc) / (2.0 * w2);
    let szv = q * e * sin_wdt * sin_wdt / (2.0 * w2);
    let svv = q * (0.5 * (j0 + jc) - 0.5 * (c / w) * js + c * c / (8.0 * w2) * (j0 - jc));
    (szz, szv, svv)
}

/// Precomputed propagator for a fixed `(γ, Ω, dt, force PSD)` combination:
/// transition matrix plus the Cholesky factor of the step covariance.
#[derive(Debug, Clone, Copy)]
pub struct StepKernel {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
    l11: f64,
    l21: f64,
    l22: f64,
    noisy: bool,
}

impl StepKernel {
    /// `force_psd` is the one-sided total force noise PSD (N²/Hz).
    pub fn new(gamma: f64, omega: f64, dt: f64, force_psd: f64, mass: f64) -> Result<Self> {
        let m = transition(gamma, omega, dt)?;
        if force_psd < 0.0 {
            return Err(Error::invalid("force PSD must be >= 0"));
        }
        let q = force_psd / (2.0 * mass * mass);
        let (szz, szv, svv) = step_covariance(gamma, omega, dt, q);
        let l11 = szz.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { szv / l11 } else { 0.0 };
        let l22 = (svv - l21 * l21).max(0.0).sqrt();
        Ok(StepKernel {
            m11: m[0],
            m12: m[1],
            m21: m[2],
            m22: m[3],
            l11,
            l21,
            l22,
            noisy: force_psd > 0.0,
        })
    }

    /// Advances `(z, v)` by one step given two standard-normal draws.
    #[inline]
    pub fn step(&self, z: f64, v: f64, n1: f64, n2: f64) -> (f64, f64) {
        let z_new = self.m11 * z + self.m12 * v + self.l11 * n1;
        let v_new = self.m21 * z + self.m22 * v + self.l21 * n1 + self.l22 * n2;
        (z_new, v_new)
    }

    pub fn is_noisy(&self) -> bool {
        self.noisy
    }
}

/// One exact step of the linear SDE under a constant mean force.
///
/// `total_force_psd` is the one-sided white force noise PSD (N²/Hz);
/// `mean_force` is held constant over the step (exact for constant forcing).
/// Valid for arbitrary `dt`, including `dt ≫ 1/Ω`.
pub fn exact_step<R: rand::Rng>(
    state: &OscState,
    dt: f64,
    gamma: f64,
    omega: f64,
    mass: f64,
    total_force_psd: f64,
    mean_force: f64,
    rng: &mut R,
) -> Result<OscState> {
    let kernel = StepKernel::new(gamma, omega, dt, total_force_psd, mass)?;
    // Particular solution for a constant force: offset equilibrium.
    let z_eq = mean_force / (mass * omega * omega);
    let (n1, n2) = if kernel.is_noisy() {
        (
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        )
    } else {
        (0.0, 0.0)
    };
    let (dz, dv) = kernel.step(state.z - z_eq, state.v, n1, n2);
    Ok(OscState {
        z: dz + z_eq,
        v: dv,
        t: state.t + dt,
    })
}

/// Steady-state response to a sinusoidal drive; used as the exact particular
/// solution when propagating driven segments.
#[derive(Debug, Clone, Copy)]
struct DriveResponse {
    amplitude: f64,
    omega_c: f64,
    phase: f64,
}

impl DriveResponse {
    fn new(drive: &DriveConfig, gamma: f64, omega: f64, mass: f64) -> Result<Self> {
        let wc = 2.0 * std::f64::consts::PI * drive.frequency;
        let d2 = omega * omega - wc * wc;
        let denom = (d2 * d2 + gamma * gamma * wc * wc).sqrt();
        if denom == 0.0 {
            return Err(Error::UnsupportedRegime(
                "resonant drive with zero damping has no steady state".into(),
            ));
        }
        let lag = f64::atan2(gamma * wc, d2);
        Ok(DriveResponse {
            amplitude: drive.force_amplitude / mass / denom,
            omega_c: wc,
            phase: drive.phase - lag,
        })
    }

    #[inline]
    fn state_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = (self.omega_c * t + self.phase).sin_cos();
        (self.amplitude * s, self.amplitude * self.omega_c * c)
    }
}

/// Sampled trajectory: position and velocity on a uniform grid plus the
/// illumination mask.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    /// `lit[i]` is false for samples taken outside illumination windows.
    pub lit: Vec<bool>,
    pub omega: f64,
    pub mass: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Position trace (m) carrying the illumination mask.
    pub fn position_trace(&self) -> TimeTrace {
        TimeTrace::new(0.0, self.dt, self.z.clone(), Unit::Meter).with_mask(self.lit.clone())
    }

    /// Envelope amplitude `√(z² + (v/Ω)²)` per sample (m).
    pub fn amplitude_series(&self) -> Vec<f64> {
        self.z
            .iter()
            .zip(&self.v)
            .map(|(&z, &v)| (z * z + (v / self.omega) * (v / self.omega)).sqrt())
            .collect()
    }

    pub fn state_at(&self, i: usize) -> OscState {
        OscState {
            z: self.z[i],
            v: self.v[i],
            t: i as f64 * self.dt,
        }
    }
}

/// RNG for trajectory `index` of an ensemble: one ChaCha stream per
/// trajectory, keyed by `(seed, index)`, so ensemble members are independent
/// and the result does not depend on scheduling order.
fn trajectory_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Segment {
    /// First step index covered (step k advances sample k to k+1).
    first_step: usize,
    /// One past the last step index.
    end_step: usize,
    kernel: StepKernel,
    drive: Option<DriveResponse>,
}

fn build_segments(config: &SimConfig) -> Result<Vec<Segment>> {
    let gamma = config.gamma()?;
    let omega = config.env.omega_z();
    let mass = config.particle.mass;
    let force_psd = config.total_force_psd()?;
    let n_steps = config.n_samples().saturating_sub(1);

    // Segment boundaries wherever a feedback or drive window starts or ends.
    let mut edges: Vec<f64> = vec![0.0, config.duration];
    for w in config.schedule.feedback.iter().chain(&config.schedule.drive) {
        edges.push(w.start);
        edges.push(w.end);
    }
    edges.retain(|&t| t >= 0.0 && t <= config.duration);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup();

    let feedback_active = |t: f64| -> bool {
        match &config.controller {
            None => false,
            Some(_) if config.schedule.feedback.is_empty() => true,
            Some(_) => config.schedule.feedback.iter().any(|w| w.contains(t)),
        }
    };
    let drive_active = |t: f64| -> bool {
        match &config.drive {
            None => false,
            Some(_) if config.schedule.drive.is_empty() => true,
            Some(_) => config.schedule.drive.iter().any(|w| w.contains(t)),
        }
    };

    let mut segments = Vec::new();
    for pair in edges.windows(2) {
        let (t_a, t_b) = (pair[0], pair[1]);
        if t_b <= t_a {
            continue;
        }
        // Steps whose midpoint falls inside [t_a, t_b).
        let first_step = ((t_a / config.dt - 0.5).ceil().max(0.0)) as usize;
        let end_step = (((t_b / config.dt - 0.5).ceil().max(0.0)) as usize).min(n_steps);
        if end_step <= first_step {
            continue;
        }
        let mid = 0.5 * (t_a + t_b);
        let gain = if feedback_active(mid) {
            config.controller.as_ref().map_or(0.0, |f| f.gain)
        } else {
            0.0
        };
        let gamma_eff = gamma + gain;
        let kernel = StepKernel::new(gamma_eff, omega, config.dt, force_psd, mass)?;
        let drive = if drive_active(mid) {
            Some(DriveResponse::new(
                config.drive.as_ref().unwrap(),
                gamma_eff,
                omega,
                mass,
            )?)
        } else {
            None
        };
        segments.push(Segment {
            first_step,
            end_step,
            kernel,
            drive,
        });
    }
    Ok(segments)
}

fn initial_state<R: rand::Rng>(config: &SimConfig, rng: &mut R) -> OscState {
    let omega = config.env.omega_z();
    match config.initial {
        InitialState::Rest => OscState::at_rest(),
        InitialState::State { z, v } => OscState { z, v, t: 0.0 },
        InitialState::Thermal { temperature } => {
            let sz = (BOLTZMANN * temperature / (config.particle.mass * omega * omega)).sqrt();
            let sv = (BOLTZMANN * temperature / config.particle.mass).sqrt();
            let n1: f64 = StandardNormal.sample(rng);
            let n2: f64 = StandardNormal.sample(rng);
            OscState {
                z: sz * n1,
                v: sv * n2,
                t: 0.0,
            }
        }
        InitialState::Amplitude { amplitude, phase } => OscState {
            z: amplitude * phase.sin(),
            v: amplitude * omega * phase.cos(),
            t: 0.0,
        },
    }
}

fn simulate_indexed(config: &SimConfig, index: u64) -> Result<Trajectory> {
    let n = config.n_samples();
    let segments = build_segments(config)?;
    let mut rng = trajectory_rng(config.seed, index);
    let state = initial_state(config, &mut rng);

    let mut z = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    z.push(state.z);
    v.push(state.v);

    let (mut zc, mut vc) = (state.z, state.v);
    for seg in &segments {
        let noisy = seg.kernel.is_noisy();
        for k in seg.first_step..seg.end_step {
            let (n1, n2) = if noisy {
                (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            match &seg.drive {
                None => {
                    let (zn, vn) = seg.kernel.step(zc, vc, n1, n2);
                    zc = zn;
                    vc = vn;
                }
                Some(drive) => {
                    // Propagate the deviation from the exact steady-state
                    // particular solution.
                    let t = k as f64 * config.dt;
                    let (zp0, vp0) = drive.state_at(t);
                    let (zp1, vp1) = drive.state_at(t + config.dt);
                    let (dz, dv) = seg.kernel.step(zc - zp0, vc - vp0, n1, n2);
                    zc = zp1 + dz;
                    vc = vp1 + dv;
                }
            }
            z.push(zc);
            v.push(vc);
        }
    }

    let lit = (0..n)
        .map(|i| {
            let t = i as f64 * config.dt;
            config.schedule.illumination.is_empty()
                || config.schedule.illumination.iter().any(|w| w.contains(t))
        })
        .collect();

    Ok(Trajectory {
        dt: config.dt,
        z,
        v,
        lit,
        omega: config.env.omega_z(),
        mass: config.particle.mass,
    })
}

/// Simulates one trajectory. Deterministic in `(config, seed)`.
pub fn simulate_trajectory(config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    simulate_indexed(config, 0)
}

/// Simulates `n` independent trajectories with per-trajectory seeds derived
/// from `(config.seed, index)`. Trajectories run in parallel; the result is
/// identical for any thread count.
pub fn simulate_ensemble(config: &SimConfig, n: usize) -> Result<Vec<Trajectory>> {
    ensemble_map(config, n, |_, t| t)
}

/// Runs `n` trajectories and reduces each with `f(index, trajectory)` as
/// soon as it is generated, keeping only the reduced values in memory.
pub fn ensemble_map<T, F>(config: &SimConfig, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, Trajectory) -> T + Sync,
{
    if n == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    config.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_indexed(config, i).map(|t| f(i, t)))
        .collect()
}

/// Energy estimate per time bin: `E_k = m·Ω_z²·⟨z²⟩_bin` (J), the
/// position-variance proxy for the total energy under equipartition of the
/// two quadratures. Bins with no lit samples are flagged dark.
pub fn energy_series(trace: &TimeTrace, bin: f64, mass: f64, omega: f64) -> Result<TimeTrace> {
    if trace.unit != Unit::Meter {
        return Err(Error::invalid(
            "energy_series expects a position trace in metres",
        ));
    }
    let var = variance_series(trace, bin)?;
    let scale = mass * omega * omega;
    let values = var.values.iter().map(|&s| scale * s).collect();
    Ok(TimeTrace {
        t0: var.t0,
        dt: var.dt,
        values,
        unit: Unit::Joule,
        lit: var.lit,
    })
}

/// Mean of the squared signal over consecutive bins of length `bin` seconds,
/// computed over lit samples only.
pub fn variance_series(trace: &TimeTrace, bin: f64) -> Result<TimeTrace> {
    if bin < trace.dt {
        return Err(Error::invalid(format!(
            "bin ({bin}) must be at least one sample interval ({})",
            trace.dt
        )));
    }
    let bin_len = (bin / trace.dt).round().max(1.0) as usize;
    let n_bins = trace.len() / bin_len;
    if n_bins == 0 {
        return Err(Error::invalid("trace shorter than one bin"));
    }
    let out_unit = match trace.unit {
        Unit::Meter => Unit::MeterSquared,
        Unit::Volt => Unit::VoltSquared,
        u => u,
    };
    let mut values = Vec::with_capacity(n_bins);
    let mut lit = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in k * bin_len..(k + 1) * bin_len {
            if trace.is_lit(i) {
                sum += trace.values[i] * trace.values[i];
                count += 1;
            }
        }
        if count == 0 {
            values.push(0.0);
            lit.push(false);
        } else {
            values.push(sum / count as f64);
            lit.push(true);
        }
    }
    let all_lit = lit.iter().all(|&b| b);
    let mut out = TimeTrace::new(
        trace.t0 + 0.5 * bin_len as f64 * trace.dt,
        bin_len as f64 * trace.dt,
        values,
        out_unit,
    );
    if !all_lit {
        out = out.with_mask(lit);
    }
    Ok(out)
}
