//! Declarative experiment scenarios: a TOML config describes the particle,
//! environment, simulation, detection channel, and estimator chain; the
//! runner executes the pipeline deterministically and writes CSV/JSON
//! artifacts plus a plain-text summary.
//!
//! Keys carry explicit units in their names (`pressure_mbar`, `f_z_hz`,
//! `dt_s`) because unit confusion is the dominant failure mode in this
//! domain.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::constants::BOLTZMANN;
use crate::detection::{self, CameraConfig, IntensityProfile, PixelGrid};
use crate::dynamics::{
    self, DriveConfig, FeedbackConfig, InitialState, NoiseSource, Schedule, SimConfig, Window,
};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::io;
use crate::physics::{Environment, ParticleShape, ParticleSpec, Uncertain};
use crate::spectral::{self, FrequencySeries, PllOptions};
use crate::trace::{TimeTrace, Unit};

/// Top-level scenario file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub particle: ParticleToml,
    pub environment: EnvironmentToml,
    pub simulation: SimulationToml,
    #[serde(default)]
    pub detection: DetectionToml,
    #[serde(default)]
    pub estimators: Vec<EstimatorToml>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleToml {
    pub mass_kg: f64,
    pub radius_m: f64,
    pub charge_e: i64,
    pub shape: ParticleShape,
    #[serde(default = "default_accommodation")]
    pub accommodation: f64,
    #[serde(default = "default_temp")]
    pub surface_temp_k: f64,
}

fn default_accommodation() -> f64 {
    0.9
}

fn default_temp() -> f64 {
    300.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentToml {
    pub pressure_mbar: f64,
    #[serde(default = "default_temp")]
    pub gas_temp_k: f64,
    #[serde(default = "default_gas_mass")]
    pub gas_molecule_mass_kg: f64,
    pub f_z_hz: f64,
    #[serde(default = "default_electrode_distance")]
    pub electrode_distance_m: f64,
    #[serde(default = "default_resistivity")]
    pub electrode_resistivity_ohm_m: f64,
}

fn default_gas_mass() -> f64 {
    crate::constants::H2_MOLECULE_MASS
}

fn default_electrode_distance() -> f64 {
    0.92e-3
}

fn default_resistivity() -> f64 {
    6.9e-7
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationToml {
    /// Gas damping rate; derived from kinetic theory when omitted.
    pub gamma_rad_s: Option<f64>,
    /// Sample interval; derived from `samples_per_period` when omitted.
    pub dt_s: Option<f64>,
    #[serde(default = "default_samples_per_period")]
    pub samples_per_period: f64,
    pub duration_s: f64,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub noise: Vec<NoiseToml>,
    pub initial: InitialToml,
    pub feedback: Option<FeedbackToml>,
    pub drive: Option<DriveToml>,
    pub illumination: Option<IlluminationToml>,
}

fn default_samples_per_period() -> f64 {
    16.0
}

fn default_ensemble() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseToml {
    Thermal { temperature_k: f64 },
    WhiteForce { s_ff_n2_hz: f64 },
    Displacement { s_zz_m2_hz: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialToml {
    Rest,
    State { z_m: f64, v_m_s: f64 },
    Thermal { temperature_k: f64 },
    Amplitude {
        amplitude_m: f64,
        #[serde(default)]
        phase_rad: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackToml {
    pub gain_rad_s: f64,
    #[serde(default)]
    pub windows_s: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveToml {
    pub force_n: f64,
    pub frequency_hz: f64,
    #[serde(default)]
    pub phase_rad: f64,
    #[serde(default)]
    pub windows_s: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationToml {
    #[serde(default)]
    pub windows_s: Vec<[f64; 2]>,
    /// Periodic strobing: `on_s` of light every `period_s`, starting at
    /// `start_s`; expanded into explicit windows.
    pub periodic: Option<PeriodicToml>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicToml {
    pub period_s: f64,
    pub on_s: f64,
    #[serde(default)]
    pub start_s: f64,
}

/// Detection channel synthesized from the simulated motion.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionToml {
    #[serde(default)]
    pub mode: DetectionMode,
    /// Amplitude/camera sampling cadence (s).
    pub cadence_s: Option<f64>,
    /// Amplitude-measurement noise Δa (m).
    #[serde(default)]
    pub delta_a_m: f64,
    /// APD responsivity (V/m).
    pub alpha_v_per_m: Option<f64>,
    /// APD readout noise PSD (V²/Hz).
    #[serde(default)]
    pub readout_noise_v2_hz: f64,
    /// Variance/energy binning time (s).
    #[serde(default = "default_bin")]
    pub bin_s: f64,
    /// Normalization temperature for energy units (K).
    #[serde(default = "default_temp")]
    pub t0_k: f64,
    /// Camera model (required for `mode = "camera"`).
    pub camera: Option<CameraToml>,
}

fn default_bin() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// No detection; traces only.
    #[default]
    None,
    /// Raw position trace of a single trajectory.
    Position,
    /// Envelope amplitude sampled at the cadence, with Δa noise.
    Amplitude,
    /// APD voltage → binned variance (V²), ensemble averaged.
    ApdVariance,
    /// Ideal energy readout (k_B·T_0 units), ensemble averaged.
    Energy,
    /// Synthesized camera frames at the cadence, fitted to amplitudes.
    Camera,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraToml {
    pub meter_per_pixel: f64,
    pub psf_width_px: f64,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub background: f64,
    #[serde(default)]
    pub illumination_slope_per_px: f64,
    pub center_px: f64,
    pub pixels: usize,
    pub exposure_s: f64,
}

fn default_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorToml {
    /// Weighted log-space ring-down fit on squared amplitudes.
    Ringdown,
    /// APD calibration fit (fixes b below `t_fb_s`, fits a and γ above).
    Calibrate { t_fb_s: f64 },
    /// Single-parameter ring-up fit with fixed `T_fb`.
    Ringup { t_fb_s: f64, t_fb_k: f64 },
    /// Linearized heating fit. The intercept is pinned to the mean energy
    /// measured while feedback is still active (`t < t_fb_s`), mirroring
    /// the experimental procedure; `t_fb_k` is only a fallback when no
    /// pre-release samples exist.
    Heating { t_fb_s: f64, t_fb_k: f64 },
    /// PLL instantaneous-frequency extraction from the position trace.
    Pll {
        cutoff_hz: f64,
        #[serde(default)]
        min_amplitude: f64,
    },
    /// Allan deviation of the frequency series.
    Allan {
        #[serde(default)]
        taus_s: Vec<f64>,
    },
    /// Linear drift of the frequency series.
    Drift,
    /// Averaged-periodogram PSD of the position trace.
    Psd { segment_s: f64 },
    /// Profile fits of synthesized camera frames.
    ProfileFit,
    /// Total-least-squares γ–P regression on inline points.
    Tls {
        gamma_rad_s: Vec<f64>,
        gamma_sigma_rad_s: Vec<f64>,
        pressure_mbar: Vec<f64>,
        pressure_sigma_mbar: Vec<f64>,
    },
}

impl EstimatorToml {
    fn name(&self) -> &'static str {
        match self {
            EstimatorToml::Ringdown => "ringdown",
            EstimatorToml::Calibrate { .. } => "calibrate",
            EstimatorToml::Ringup { .. } => "ringup",
            EstimatorToml::Heating { .. } => "heating",
            EstimatorToml::Pll { .. } => "pll",
            EstimatorToml::Allan { .. } => "allan",
            EstimatorToml::Drift => "drift",
            EstimatorToml::Psd { .. } => "psd",
            EstimatorToml::ProfileFit => "profile_fit",
            EstimatorToml::Tls { .. } => "tls",
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn particle(&self) -> ParticleSpec {
        ParticleSpec {
            mass: self.particle.mass_kg,
            nominal_radius: self.particle.radius_m,
            charge_e: self.particle.charge_e,
            shape: self.particle.shape,
            accommodation: self.particle.accommodation,
            surface_temperature: self.particle.surface_temp_k,
        }
    }

    pub fn environment(&self) -> Environment {
        Environment {
            pressure_mbar: self.environment.pressure_mbar,
            gas_temperature: self.environment.gas_temp_k,
            gas_molecule_mass: self.environment.gas_molecule_mass_kg,
            secular_frequency: self.environment.f_z_hz,
            electrode_distance: self.environment.electrode_distance_m,
            electrode_resistivity: self.environment.electrode_resistivity_ohm_m,
        }
    }

    fn illumination_windows(&self) -> Vec<Window> {
        let Some(ill) = &self.simulation.illumination else {
            return Vec::new();
        };
        let mut windows: Vec<Window> = ill
            .windows_s
            .iter()
            .map(|w| Window::new(w[0], w[1]))
            .collect();
        if let Some(p) = &ill.periodic {
            let mut t = p.start_s;
            while t < self.simulation.duration_s {
                windows.push(Window::new(t, (t + p.on_s).min(self.simulation.duration_s)));
                t += p.period_s;
            }
        }
        windows.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        windows
    }

    /// Builds the dynamics configuration, applying an optional seed override.
    pub fn sim_config(&self, seed_override: Option<u64>) -> SimConfig {
        let dt = self
            .simulation
            .dt_s
            .unwrap_or(1.0 / (self.simulation.samples_per_period * self.environment.f_z_hz));
        SimConfig {
            particle: self.particle(),
            env: self.environment(),
            gamma: self.simulation.gamma_rad_s,
            dt,
            duration: self.simulation.duration_s,
            seed: seed_override.unwrap_or(self.seed),
            noise: self
                .simulation
                .noise
                .iter()
                .map(|n| match *n {
                    NoiseToml::Thermal { temperature_k } => NoiseSource::Thermal {
                        temperature: temperature_k,
                    },
                    NoiseToml::WhiteForce { s_ff_n2_hz } => {
                        NoiseSource::WhiteForce { s_ff: s_ff_n2_hz }
                    }
                    NoiseToml::Displacement { s_zz_m2_hz } => {
                        NoiseSource::Displacement { s_zz: s_zz_m2_hz }
                    }
                })
                .collect(),
            controller: self
                .simulation
                .feedback
                .as_ref()
                .map(|f| FeedbackConfig { gain: f.gain_rad_s }),
            drive: self.simulation.drive.as_ref().map(|d| DriveConfig {
                force_amplitude: d.force_n,
                frequency: d.frequency_hz,
                phase: d.phase_rad,
            }),
            schedule: Schedule {
                feedback: self
                    .simulation
                    .feedback
                    .as_ref()
                    .map(|f| f.windows_s.iter().map(|w| Window::new(w[0], w[1])).collect())
                    .unwrap_or_default(),
                drive: self
                    .simulation
                    .drive
                    .as_ref()
                    .map(|d| d.windows_s.iter().map(|w| Window::new(w[0], w[1])).collect())
                    .unwrap_or_default(),
                illumination: self.illumination_windows(),
            },
            initial: match self.simulation.initial {
                InitialToml::Rest => InitialState::Rest,
                InitialToml::State { z_m, v_m_s } => InitialState::State { z: z_m, v: v_m_s },
                InitialToml::Thermal { temperature_k } => InitialState::Thermal {
                    temperature: temperature_k,
                },
                InitialToml::Amplitude {
                    amplitude_m,
                    phase_rad,
                } => InitialState::Amplitude {
                    amplitude: amplitude_m,
                    phase: phase_rad,
                },
            },
        }
    }

    /// Collects every validation problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let cfg = self.sim_config(None);
        if let Err(Error::Config(p)) = cfg.validate() {
            problems.extend(p);
        }
        let det = &self.detection;
        let needs_cadence = matches!(det.mode, DetectionMode::Amplitude | DetectionMode::Camera);
        if needs_cadence && det.cadence_s.is_none() {
            problems.push(format!("detection mode {:?} requires cadence_s", det.mode));
        }
        if det.mode == DetectionMode::ApdVariance && det.alpha_v_per_m.is_none() {
            problems.push("apd_variance detection requires alpha_v_per_m".into());
        }
        if det.mode == DetectionMode::Camera && det.camera.is_none() {
            problems.push("camera detection requires a [detection.camera] table".into());
        }
        if matches!(
            det.mode,
            DetectionMode::Position | DetectionMode::Amplitude | DetectionMode::Camera
        ) && self.simulation.ensemble != 1
        {
            problems.push(format!(
                "detection mode {:?} operates on a single trajectory; set ensemble = 1",
                det.mode
            ));
        }
        // Estimator-input compatibility.
        let mut have_amplitudes = matches!(det.mode, DetectionMode::Amplitude | DetectionMode::Camera);
        let mut have_variance = det.mode == DetectionMode::ApdVariance;
        let mut have_energy = det.mode == DetectionMode::Energy;
        let have_position = matches!(det.mode, DetectionMode::Position);
        let mut have_frequency = false;
        let have_profiles = det.mode == DetectionMode::Camera;
        for est in &self.estimators {
            match est {
                EstimatorToml::Ringdown => {
                    if !have_amplitudes {
                        problems.push(
                            "ringdown estimator needs amplitude or camera detection".into(),
                        );
                    }
                }
                EstimatorToml::Calibrate { .. } => {
                    if !have_variance {
                        problems.push("calibrate estimator needs apd_variance detection".into());
                    } else {
                        have_energy = true;
                    }
                }
                EstimatorToml::Ringup { .. } | EstimatorToml::Heating { .. } => {
                    if !have_energy {
                        problems.push(format!(
                            "{} estimator needs energy detection or a preceding calibrate step",
                            est.name()
                        ));
                    }
                }
                EstimatorToml::Pll { .. } => {
                    if !have_position {
                        problems.push("pll estimator needs position detection".into());
                    } else {
                        have_frequency = true;
                    }
                }
                EstimatorToml::Allan { .. } | EstimatorToml::Drift => {
                    if !have_frequency {
                        problems.push(format!(
                            "{} estimator needs a preceding pll step",
                            est.name()
                        ));
                    }
                }
                EstimatorToml::Psd { .. } => {
                    if !have_position {
                        problems.push("psd estimator needs position detection".into());
                    }
                }
                EstimatorToml::ProfileFit => {
                    if !have_profiles {
                        problems.push("profile_fit estimator needs camera detection".into());
                    }
                }
                EstimatorToml::Tls { gamma_rad_s, gamma_sigma_rad_s, pressure_mbar, pressure_sigma_mbar } => {
                    let n = gamma_rad_s.len();
                    if n < 2
                        || gamma_sigma_rad_s.len() != n
                        || pressure_mbar.len() != n
                        || pressure_sigma_mbar.len() != n
                    {
                        problems.push(
                            "tls estimator needs >= 2 points with matching array lengths".into(),
                        );
                    }
                }
            }
            let _ = &mut have_amplitudes;
            let _ = &mut have_variance;
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Amplitude measurements derived from a detection channel.
#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeData {
    pub times: Vec<f64>,
    /// Squared amplitudes (m²).
    pub squared: Vec<f64>,
    /// 1σ amplitude uncertainty (m).
    pub delta_a: f64,
}

/// Everything a scenario run produced.
#[derive(Debug, Default)]
pub struct ScenarioOutcome {
    pub name: String,
    pub fits: Vec<(String, FitResult)>,
    /// Per-step failures (step name, error text); independent steps continue.
    pub failures: Vec<(String, String)>,
    pub report: String,
    pub written: Vec<PathBuf>,
}

struct PipelineData {
    position: Option<TimeTrace>,
    amplitudes: Option<AmplitudeData>,
    variance: Option<TimeTrace>,
    energy: Option<TimeTrace>,
    profiles: Vec<IntensityProfile>,
    frequency: Option<FrequencySeries>,
}

/// Runs a scenario end to end. Artifacts are written under `out_dir` when
/// given; the textual report is always returned.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<ScenarioOutcome> {
    scenario.validate()?;
    let cfg = scenario.sim_config(seed_override);
    let det = &scenario.detection;
    let omega = cfg.env.omega_z();
    let mass = cfg.particle.mass;

    let mut data = PipelineData {
        position: None,
        amplitudes: None,
        variance: None,
        energy: None,
        profiles: Vec::new(),
        frequency: None,
    };

    // Detection stage.
    match det.mode {
        DetectionMode::None => {
            let traj = dynamics::simulate_trajectory(&cfg)?;
            data.position = Some(traj.position_trace());
        }
        DetectionMode::Position => {
            let traj = dynamics::simulate_trajectory(&cfg)?;
            data.position = Some(traj.position_trace());
        }
        DetectionMode::Amplitude => {
            let traj = dynamics::simulate_trajectory(&cfg)?;
            let cadence = det.cadence_s.unwrap();
            let stride = (cadence / cfg.dt).round().max(1.0) as usize;
            let mut rng = measurement_rng(cfg.seed);
            let mut times = Vec::new();
            let mut squared = Vec::new();
            let amps = traj.amplitude_series();
            for i in (0..traj.len()).step_by(stride) {
                if !traj.lit[i] {
                    continue;
                }
                let noise: f64 = StandardNormal.sample(&mut rng);
                let measured = amps[i] + det.delta_a_m * noise;
                times.push(i as f64 * cfg.dt);
                squared.push(measured * measured);
            }
            data.amplitudes = Some(AmplitudeData {
                times,
                squared,
                delta_a: det.delta_a_m,
            });
        }
        DetectionMode::ApdVariance => {
            let alpha = det.alpha_v_per_m.unwrap();
            let bin = det.bin_s;
            let readout = det.readout_noise_v2_hz;
            let n = scenario.simulation.ensemble;
            let seed = cfg.seed;
            let series: Vec<TimeTrace> = dynamics::ensemble_map(&cfg, n, |idx, traj| {
                let u = detection::apd_trace(
                    &traj.position_trace(),
                    alpha,
                    readout,
                    seed ^ 0xA5A5_5A5A_u64.wrapping_add(idx.wrapping_mul(0x9E37_79B9)),
                )
                .expect("validated alpha");
                dynamics::variance_series(&u, bin).expect("validated bin")
            })?;
            data.variance = Some(mean_traces(&series)?);
        }
        DetectionMode::Energy => {
            let bin = det.bin_s;
            let n = scenario.simulation.ensemble;
            let series: Vec<TimeTrace> = dynamics::ensemble_map(&cfg, n, |_, traj| {
                dynamics::energy_series(&traj.position_trace(), bin, mass, omega)
                    .expect("validated bin")
            })?;
            let mut mean = mean_traces(&series)?;
            let scale = 1.0 / (BOLTZMANN * det.t0_k);
            for v in mean.values.iter_mut() {
                *v *= scale;
            }
            mean.unit = Unit::KbT0;
            data.energy = Some(mean);
        }
        DetectionMode::Camera => {
            let traj = dynamics::simulate_trajectory(&cfg)?;
            let cam_toml = det.camera.as_ref().unwrap();
            let cadence = det.cadence_s.unwrap();
            let cam = CameraConfig {
                meter_per_pixel: cam_toml.meter_per_pixel,
                psf_width_px: cam_toml.psf_width_px,
                gain: cam_toml.gain,
                background: cam_toml.background,
                illumination_slope: cam_toml.illumination_slope_per_px,
                center_px: cam_toml.center_px,
                grid: PixelGrid {
                    origin: 0.0,
                    pitch: 1.0,
                    len: cam_toml.pixels,
                },
                oscillation_period: 1.0 / cfg.env.secular_frequency,
            };
            let trace = traj.position_trace();
            let mut t = 0.0;
            while t + cam_toml.exposure_s <= cfg.duration {
                data.profiles
                    .push(detection::camera_frame_from_trace(&trace, t, t + cam_toml.exposure_s, &cam)?);
                t += cadence;
            }
        }
    }

    let mut outcome = ScenarioOutcome {
        name: scenario.name.clone(),
        ..Default::default()
    };

    // Camera frames invert to amplitudes before the estimator chain runs.
    if det.mode == DetectionMode::Camera && !data.profiles.is_empty() {
        let cadence = det.cadence_s.unwrap();
        let mpp = det.camera.as_ref().unwrap().meter_per_pixel;
        let mut fits = Vec::new();
        let mut times = Vec::new();
        let mut squared = Vec::new();
        for (k, profile) in data.profiles.iter().enumerate() {
            match detection::fit_profile(profile) {
                Ok(f) => {
                    times.push(k as f64 * cadence);
                    let a_m = f.params.amp_a * mpp;
                    squared.push(a_m * a_m);
                    fits.push(f);
                }
                Err(e) => outcome
                    .failures
                    .push((format!("profile_fit[{k}]"), e.to_string())),
            }
        }
        let delta_a = detection::mean_amplitude_uncertainty(&fits)
            .map(|px| px * mpp)
            .unwrap_or(det.delta_a_m);
        data.amplitudes = Some(AmplitudeData {
            times,
            squared,
            delta_a,
        });
    }

    // Estimator chain; independent steps continue past failures.
    for est in &scenario.estimators {
        let step = est.name().to_string();
        let result: Result<Option<(String, FitResult)>> = run_estimator(
            est,
            &mut data,
            det,
            omega,
            mass,
        );
        match result {
            Ok(Some(named)) => outcome.fits.push(named),
            Ok(None) => {}
            Err(e) => outcome.failures.push((step, e.to_string())),
        }
    }

    outcome.report = render_report(scenario, &outcome, &data);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        if let Some(trace) = &data.position {
            let p = dir.join("position.csv");
            io::export_trace_csv(trace, &p)?;
            outcome.written.push(p);
        }
        if let Some(v) = &data.variance {
            let p = dir.join("variance.csv");
            io::export_trace_csv(v, &p)?;
            outcome.written.push(p);
        }
        if let Some(e) = &data.energy {
            let p = dir.join("energy.csv");
            io::export_trace_csv(e, &p)?;
            outcome.written.push(p);
        }
        if let Some(a) = &data.amplitudes {
            let p = dir.join("amplitudes.csv");
            let trace = TimeTrace::new(
                a.times.first().copied().unwrap_or(0.0),
                if a.times.len() > 1 {
                    a.times[1] - a.times[0]
                } else {
                    1.0
                },
                a.squared.clone(),
                Unit::MeterSquared,
            );
            io::export_trace_csv(&trace, &p)?;
            outcome.written.push(p);
        }
        for (i, profile) in data.profiles.iter().enumerate() {
            let p = dir.join(format!("profile_{i:03}.csv"));
            io::export_profile_csv(profile, &p)?;
            outcome.written.push(p);
        }
        if let Some(f) = &data.frequency {
            let p = dir.join("frequency.csv");
            io::export_frequency_csv(f, &p)?;
            outcome.written.push(p);
        }
        for (name, fit) in &outcome.fits {
            let p = dir.join(format!("fit_{name}.json"));
            io::export_fit_json(fit, &p)?;
            outcome.written.push(p);
        }
        let p = dir.join("report.txt");
        std::fs::write(&p, &outcome.report)?;
        outcome.written.push(p);
    }
    Ok(outcome)
}

fn run_estimator(
    est: &EstimatorToml,
    data: &mut PipelineData,
    det: &DetectionToml,
    omega: f64,
    mass: f64,
) -> Result<Option<(String, FitResult)>> {
    match est {
        EstimatorToml::Ringdown => {
            let a = data
                .amplitudes
                .as_ref()
                .ok_or_else(|| Error::invalid("no amplitude data available"))?;
            let fit = analysis::ringdown_fit(&a.times, &a.squared, a.delta_a)?;
            Ok(Some(("ringdown".into(), fit)))
        }
        EstimatorToml::Calibrate { t_fb_s } => {
            let v = data
                .variance
                .as_ref()
                .ok_or_else(|| Error::invalid("no variance data available"))?;
            let (cal, fit) = detection::calibrate_ringup(v, *t_fb_s, det.t0_k, mass, omega)?;
            data.energy = Some(detection::apply_calibration(v, &cal)?);
            Ok(Some(("calibrate".into(), fit)))
        }
        EstimatorToml::Ringup { t_fb_s, t_fb_k } => {
            let e = data
                .energy
                .as_ref()
                .ok_or_else(|| Error::invalid("no energy data available"))?;
            let fit = analysis::ringup_fit(e, *t_fb_s, *t_fb_k, det.t0_k)?;
            Ok(Some(("ringup".into(), fit)))
        }
        EstimatorToml::Heating { t_fb_s, t_fb_k } => {
            let e = data
                .energy
                .as_ref()
                .ok_or_else(|| Error::invalid("no energy data available"))?;
            // Intercept from the measured pre-release energy: the realized
            // ensemble offset cancels out of the slope, as in the original
            // procedure where T_fb comes from the t < t_fb data.
            let cold: Vec<f64> = e
                .lit_samples()
                .filter(|(t, _)| *t < *t_fb_s)
                .map(|(_, v)| v)
                .collect();
            let t_fb_kelvin = if cold.is_empty() {
                *t_fb_k
            } else {
                det.t0_k * cold.iter().sum::<f64>() / cold.len() as f64
            };
            let fit = analysis::heating_fit(e, *t_fb_s, t_fb_kelvin, det.t0_k, omega)?;
            Ok(Some(("heating".into(), fit)))
        }
        EstimatorToml::Pll {
            cutoff_hz,
            min_amplitude,
        } => {
            let trace = data
                .position
                .as_ref()
                .ok_or_else(|| Error::invalid("no position trace available"))?;
            let f_z = omega / (2.0 * std::f64::consts::PI);
            data.frequency = Some(spectral::pll_extract_with(
                trace,
                f_z,
                &PllOptions {
                    cutoff: *cutoff_hz,
                    min_amplitude: *min_amplitude,
                    decimate: None,
                },
            )?);
            Ok(None)
        }
        EstimatorToml::Allan { taus_s } => {
            let series = data
                .frequency
                .as_ref()
                .ok_or_else(|| Error::invalid("no frequency series; run pll first"))?;
            let taus = if taus_s.is_empty() {
                spectral::default_taus(series.dt()?, series.duration()?)
            } else {
                taus_s.clone()
            };
            let points = spectral::allan_deviation(series, &taus)?;
            // Summarized as a pseudo-fit: the minimum of σ(τ) over taus
            // with enough intervals for a stable estimate.
            let best = points
                .iter()
                .filter(|p| p.intervals >= 8)
                .filter_map(|p| p.sigma.map(|s| (p.tau_actual, s)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let mut fit = FitResult {
                params: vec![],
                covariance: vec![],
                residuals: vec![],
                point_sigmas: vec![],
                mse: 0.0,
                mean_variance: 0.0,
                iterations: 0,
                degenerate: false,
                excess_noise: false,
            };
            if let Some((tau, sigma)) = best {
                fit.params = vec![
                    crate::fit::Param {
                        name: "tau_opt_s".into(),
                        value: tau,
                        sigma: 0.0,
                    },
                    crate::fit::Param {
                        name: "sigma_min".into(),
                        value: sigma,
                        sigma: 0.0,
                    },
                ];
            }
            Ok(Some(("allan".into(), fit)))
        }
        EstimatorToml::Drift => {
            let series = data
                .frequency
                .as_ref()
                .ok_or_else(|| Error::invalid("no frequency series; run pll first"))?;
            let (rate, sigma) = spectral::drift_fit(series)?;
            let fit = FitResult {
                params: vec![crate::fit::Param {
                    name: "drift_hz_per_s".into(),
                    value: rate,
                    sigma,
                }],
                covariance: vec![sigma * sigma],
                residuals: vec![],
                point_sigmas: vec![],
                mse: 0.0,
                mean_variance: 0.0,
                iterations: 1,
                degenerate: false,
                excess_noise: false,
            };
            Ok(Some(("drift".into(), fit)))
        }
        EstimatorToml::Psd { segment_s } => {
            let trace = data
                .position
                .as_ref()
                .ok_or_else(|| Error::invalid("no position trace available"))?;
            let seg = (segment_s / trace.dt).round() as usize;
            let psd = spectral::psd(trace, seg.max(8))?;
            let fit = FitResult {
                params: vec![crate::fit::Param {
                    name: "integrated_power".into(),
                    value: psd.integrated_power(),
                    sigma: 0.0,
                }],
                covariance: vec![],
                residuals: vec![],
                point_sigmas: vec![],
                mse: 0.0,
                mean_variance: 0.0,
                iterations: 0,
                degenerate: false,
                excess_noise: false,
            };
            Ok(Some(("psd".into(), fit)))
        }
        EstimatorToml::ProfileFit => {
            // Camera mode already fitted the frames; report the count.
            if data.profiles.is_empty() {
                return Err(Error::invalid("no camera frames available"));
            }
            Ok(None)
        }
        EstimatorToml::Tls {
            gamma_rad_s,
            gamma_sigma_rad_s,
            pressure_mbar,
            pressure_sigma_mbar,
        } => {
            let gammas: Vec<Uncertain> = gamma_rad_s
                .iter()
                .zip(gamma_sigma_rad_s)
                .map(|(&v, &s)| Uncertain::new(v, s))
                .collect();
            let pressures: Vec<Uncertain> = pressure_mbar
                .iter()
                .zip(pressure_sigma_mbar)
                .map(|(&v, &s)| Uncertain::new(v, s))
                .collect();
            let fit = analysis::tls_pressure_fit(&gammas, &pressures)?;
            Ok(Some(("tls".into(), fit)))
        }
    }
}

/// RNG stream reserved for measurement noise, distinct from the trajectory
/// streams.
fn measurement_rng(seed: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    rng.set_stream(u64::MAX);
    rng
}

fn mean_traces(series: &[TimeTrace]) -> Result<TimeTrace> {
    let first = series
        .first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let n = first.len();
    let mut mean = vec![0.0; n];
    for s in series {
        if s.len() != n {
            return Err(Error::invalid("ensemble series lengths differ"));
        }
        for (m, v) in mean.iter_mut().zip(&s.values) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= series.len() as f64;
    }
    let mut out = TimeTrace::new(first.t0, first.dt, mean, first.unit);
    if let Some(lit) = &first.lit {
        out = out.with_mask(lit.clone());
    }
    Ok(out)
}

fn render_report(scenario: &Scenario, outcome: &ScenarioOutcome, data: &PipelineData) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", scenario.name);
    let _ = writeln!(s, "seed: {}", scenario.seed);
    let _ = writeln!(
        s,
        "pressure: {} mbar, f_z: {} Hz",
        scenario.environment.pressure_mbar, scenario.environment.f_z_hz
    );
    if let Some(a) = &data.amplitudes {
        let _ = writeln!(s, "amplitude samples: {}", a.times.len());
    }
    if !data.profiles.is_empty() {
        let _ = writeln!(s, "camera frames: {}", data.profiles.len());
    }
    for (name, fit) in &outcome.fits {
        let _ = writeln!(s, "[{}]", name);
        for p in &fit.params {
            let _ = writeln!(s, "  {} = {:.6e} +/- {:.3e}", p.name, p.value, p.sigma);
        }
        if !fit.residuals.is_empty() && !fit.point_sigmas.is_empty() {
            let _ = writeln!(
                s,
                "  mse = {:.3e}, mean_variance = {:.3e}{}",
                fit.mse,
                fit.mean_variance,
                if fit.excess_noise {
                    "  [EXCESS NOISE]"
                } else {
                    ""
                }
            );
        }
        if fit.degenerate {
            let _ = writeln!(s, "  [DEGENERATE]");
        }
    }
    for (step, err) in &outcome.failures {
        let _ = writeln!(s, "[{}] FAILED: {}", step, err);
    }
    s
}

/// Bundled scenario configurations, compiled into the binary.
pub fn bundled_scenarios() -> &'static [(&'static str, &'static str)] {
    &[
        ("ringdown_p2", include_str!("../scenarios/ringdown_p2.toml")),
        ("ringdown_p3", include_str!("../scenarios/ringdown_p3.toml")),
        ("ringdown_p4", include_str!("../scenarios/ringdown_p4.toml")),
        ("ringup_p1", include_str!("../scenarios/ringup_p1.toml")),
        ("heating_p4", include_str!("../scenarios/heating_p4.toml")),
        (
            "heating_p4_strobe",
            include_str!("../scenarios/heating_p4_strobe.toml"),
        ),
        ("drive_cal", include_str!("../scenarios/drive_cal.toml")),
        ("allan_p4", include_str!("../scenarios/allan_p4.toml")),
    ]
}

/// Looks up a bundled scenario by name.
pub fn bundled_scenario(name: &str) -> Result<Scenario> {
    for (n, text) in bundled_scenarios() {
        if *n == name {
            return Scenario::from_toml_str(text);
        }
    }
    Err(Error::invalid(format!(
        "unknown bundled scenario '{name}'; available: {}",
        bundled_scenarios()
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", ")
    )))
}
