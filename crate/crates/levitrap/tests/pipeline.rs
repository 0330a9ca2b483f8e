//! Cross-module closed-loop tests: estimator consistency against simulation
//! ground truth, the full camera inversion chain, and scenario validation.

use levitrap::analysis;
use levitrap::detection::{self, CameraConfig, PixelGrid, ProfileParams};
use levitrap::dynamics;
use levitrap::physics::Uncertain;
use levitrap::scenario::{bundled_scenario, run_scenario, DetectionMode, EstimatorToml, Scenario};
use levitrap::trace::Unit;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 0 {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    } else {
        v[n / 2]
    }
}

/// Closed-loop estimator consistency at the four measurement pressures:
/// the median recovered damping rate over 50 repetitions must fall within
/// twice the typical reported fit uncertainty of the configured truth.
#[test]
fn estimator_consistency_ringdowns() {
    for (name, truth) in [
        ("ringdown_p2", TWO_PI * 59e-6),
        ("ringdown_p3", TWO_PI * 5.9e-6),
        ("ringdown_p4", TWO_PI * 69e-9),
    ] {
        let scenario = bundled_scenario(name).unwrap();
        let mut gammas = Vec::new();
        let mut sigmas = Vec::new();
        for k in 0..50 {
            let outcome = run_scenario(&scenario, None, Some(scenario.seed + 1000 + k)).unwrap();
            let fit = &outcome.fits.iter().find(|(n, _)| n == "ringdown").unwrap().1;
            gammas.push(fit.value("gamma"));
            sigmas.push(fit.sigma("gamma"));
        }
        let med = median(gammas);
        let sig = median(sigmas);
        assert!(
            (med - truth).abs() < 2.0 * sig,
            "{name}: median {med:.4e} vs truth {truth:.4e} beyond 2x sigma {sig:.4e}"
        );
    }
}

#[test]
fn estimator_consistency_ringup() {
    // Ideal-energy variant of the P1 ring-up (the APD chain is exercised
    // elsewhere); 50 repetitions of a reduced 40-trace ensemble.
    let mut scenario = bundled_scenario("ringup_p1").unwrap();
    scenario.simulation.ensemble = 40;
    scenario.simulation.samples_per_period = 8.0;
    scenario.detection.mode = DetectionMode::Energy;
    scenario.detection.alpha_v_per_m = None;
    scenario.estimators = vec![EstimatorToml::Ringup {
        t_fb_s: 0.5,
        t_fb_k: 1.0,
    }];
    scenario.validate().unwrap();

    let truth = TWO_PI * 37e-3;
    let mut gammas = Vec::new();
    let mut sigmas = Vec::new();
    for k in 0..50 {
        let outcome = run_scenario(&scenario, None, Some(scenario.seed + 7000 + k)).unwrap();
        let fit = &outcome.fits.iter().find(|(n, _)| n == "ringup").unwrap().1;
        gammas.push(fit.value("gamma"));
        sigmas.push(fit.sigma("gamma"));
    }
    let med = median(gammas);
    let sig = median(sigmas);
    assert!(
        (med - truth).abs() < 2.0 * sig,
        "ring-up median {med:.4e} vs truth {truth:.4e} beyond 2x sigma {sig:.4e}"
    );
}

/// Full optical chain: trajectory → camera frames → profile fits →
/// ring-down fit recovers the configured damping rate.
#[test]
fn camera_chain_recovers_damping_rate() {
    let mut scenario = bundled_scenario("ringdown_p2").unwrap();
    let gamma = 0.01;
    scenario.simulation.gamma_rad_s = Some(gamma);
    scenario.simulation.dt_s = None;
    scenario.simulation.samples_per_period = 8.0;
    scenario.simulation.duration_s = 300.0;
    let cfg = scenario.sim_config(None);
    let traj = dynamics::simulate_trajectory(&cfg).unwrap();
    let trace = traj.position_trace();

    let meter_per_pixel = 1.35e-6;
    let cam = CameraConfig {
        meter_per_pixel,
        psf_width_px: 8.0,
        gain: 2.0,
        background: 0.1,
        illumination_slope: 0.0,
        center_px: 150.0,
        grid: PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len: 301,
        },
        oscillation_period: 1.0 / cfg.env.secular_frequency,
    };
    let mut times = Vec::new();
    let mut squared = Vec::new();
    let mut fits = Vec::new();
    let mut t = 0.0;
    while t + 0.2 <= 300.0 {
        let frame = detection::camera_frame_from_trace(&trace, t, t + 0.2, &cam).unwrap();
        assert!(!frame.exposure.unwrap().short_exposure);
        let fit = detection::fit_profile(&frame).unwrap();
        let a_m = fit.params.amp_a * meter_per_pixel;
        times.push(t);
        squared.push(a_m * a_m);
        fits.push(fit);
        t += 20.0;
    }
    assert!(times.len() >= 15);
    let delta_a = detection::mean_amplitude_uncertainty(&fits)
        .map(|px| px * meter_per_pixel)
        .unwrap_or(0.0);
    let fit = analysis::ringdown_fit(&times, &squared, delta_a).unwrap();
    let recovered = fit.value("gamma");
    assert!(
        ((recovered - gamma) / gamma).abs() < 0.02,
        "camera-chain gamma {recovered:.4e} vs truth {gamma:.4e}"
    );
}

/// Synthetic camera sets mimicking the three ring-down amplitude ranges:
/// the peak-separation amplitude uncertainty lands within a factor of two
/// of the published per-pressure values.
#[test]
fn profile_amplitude_uncertainty_ballpark() {
    let meter_per_pixel = 1.35e-6;
    let cases: [(&str, f64, f64, f64, u64); 3] = [
        ("p2-like", 185.0, 61.0, 3.9e-6, 11),
        ("p3-like", 185.0, 68.0, 3.2e-6, 22),
        ("p4-like", 259.0, 258.0, 1.9e-6, 33),
    ];
    for (label, a_start, a_end, reference, seed) in cases {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut fits = Vec::new();
        let n_profiles = 12;
        for k in 0..n_profiles {
            let a = a_start + (a_end - a_start) * k as f64 / (n_profiles - 1) as f64;
            let margin = a + 5.0 * 8.2 + 12.0;
            let grid = PixelGrid {
                origin: 0.0,
                pitch: 1.0,
                len: (2.0 * margin).ceil() as usize + 1,
            };
            let truth = ProfileParams {
                i0: 2.1,
                z0: margin,
                w: 8.2,
                amp_a: a,
                slope_b: 5e-4,
                offset_c: 0.106,
            };
            let mut profile = detection::render_profile(&truth, &grid).unwrap();
            for v in profile.intensities.iter_mut() {
                *v *= 1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal);
            }
            profile.meter_per_pixel = meter_per_pixel;
            fits.push(detection::fit_profile(&profile).unwrap());
        }
        let delta_px = detection::mean_amplitude_uncertainty(&fits).expect("two-peak profiles");
        let delta_m = delta_px * meter_per_pixel;
        assert!(
            delta_m > reference / 2.0 && delta_m < reference * 2.0,
            "{label}: delta_a = {delta_m:.3e} m vs published {reference:.1e} m (factor-2 window)"
        );
    }
}

/// Ring-up and ring-down on the same synthetic particle at high pressure
/// give consistent damping rates (the thermal-noise-dominated regime).
#[test]
fn ringup_and_ringdown_agree_at_high_pressure() {
    let gamma = TWO_PI * 0.311;
    // Ring-up through the APD chain with T_fb = 0.1 K.
    let mut scenario = bundled_scenario("ringup_p1").unwrap();
    scenario.environment.pressure_mbar = 3.1e-4;
    scenario.simulation.gamma_rad_s = Some(gamma);
    scenario.simulation.ensemble = 400;
    scenario.simulation.feedback.as_mut().unwrap().gain_rad_s = gamma * (300.0 / 0.1 - 1.0);
    scenario.simulation.initial = levitrap::scenario::InitialToml::Thermal { temperature_k: 0.1 };
    scenario.estimators = vec![
        EstimatorToml::Calibrate { t_fb_s: 0.5 },
        EstimatorToml::Ringup {
            t_fb_s: 0.5,
            t_fb_k: 0.1,
        },
    ];
    scenario.validate().unwrap();
    let outcome = run_scenario(&scenario, None, Some(606)).unwrap();
    let gamma_up = outcome
        .fits
        .iter()
        .find(|(n, _)| n == "ringup")
        .unwrap()
        .1
        .value("gamma");

    // Ring-down on the same particle: deterministic decay plus camera noise.
    let mut rng = ChaCha12Rng::seed_from_u64(607);
    let delta_a = 2.0e-6;
    let times: Vec<f64> = (0..60).map(|i| 0.05 * i as f64).collect();
    let squared: Vec<f64> = times
        .iter()
        .map(|&t| {
            let a = 250e-6 * (-0.5 * gamma * t).exp()
                + delta_a * rng.sample::<f64, _>(StandardNormal);
            a * a
        })
        .collect();
    let gamma_down = analysis::ringdown_fit(&times, &squared, delta_a)
        .unwrap()
        .value("gamma");

    let rel = |x: f64| ((x - gamma) / gamma).abs();
    assert!(rel(gamma_up) < 0.10, "ring-up gamma off by {:.1}%", rel(gamma_up) * 100.0);
    assert!(rel(gamma_down) < 0.05, "ring-down gamma off by {:.1}%", rel(gamma_down) * 100.0);
    let pair = ((gamma_up - gamma_down) / gamma_down).abs();
    assert!(pair < 0.20, "ring-up vs ring-down disagree by {:.1}%", pair * 100.0);
}

#[test]
fn scenario_validation_enumerates_problems() {
    let text = r#"
name = "broken"
seed = 1

[particle]
mass_kg = -1.0
radius_m = 150e-9
charge_e = 300
shape = "sphere"

[environment]
pressure_mbar = 1e-8
f_z_hz = 1280.0

[simulation]
duration_s = 0.0
ensemble = 1

[simulation.initial]
type = "rest"

[detection]
mode = "amplitude"

[[estimators]]
type = "ringup"
t_fb_s = 0.5
t_fb_k = 1.0
"#;
    let err = Scenario::from_toml_str(text).unwrap_err();
    let text = err.to_string();
    // Every problem is listed at once.
    assert!(text.contains("mass"), "missing mass problem: {text}");
    assert!(text.contains("duration"), "missing duration problem: {text}");
    assert!(text.contains("cadence_s"), "missing cadence problem: {text}");
    assert!(
        text.contains("ringup estimator needs energy"),
        "missing estimator-chain problem: {text}"
    );
}

#[test]
fn scenario_empty_estimator_chain_yields_traces_only() {
    let mut scenario = bundled_scenario("drive_cal").unwrap();
    scenario.estimators.clear();
    let dir = std::env::temp_dir().join(format!("levitrap-pipe-{}", std::process::id()));
    let outcome = run_scenario(&scenario, Some(&dir), None).unwrap();
    assert!(outcome.fits.is_empty());
    assert!(outcome
        .written
        .iter()
        .any(|p| p.file_name().unwrap() == "position.csv"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bundled_scenarios_parse_and_validate() {
    for (name, _) in levitrap::scenario::bundled_scenarios() {
        let scenario = bundled_scenario(name).unwrap();
        scenario.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

/// Drive response in a stiff trap: the calibration-tone amplitude follows
/// A = F/(m·Ω_z²) within 5% once the transient has settled, and the APD
/// tone measurement recovers α·A.
#[test]
fn drive_tone_chain() {
    let mut scenario = bundled_scenario("drive_cal").unwrap();
    scenario.environment.f_z_hz = 2000.0;
    let cfg = scenario.sim_config(None);
    let traj = dynamics::simulate_trajectory(&cfg).unwrap();
    let omega = cfg.env.omega_z();
    let expected = 1.0e-18 / (cfg.particle.mass * omega * omega);

    // Drop the transient (gamma = 50 -> settled after ~0.2 s).
    let start = (0.4 / cfg.dt) as usize;
    let tail = levitrap::trace::TimeTrace::new(
        0.0,
        cfg.dt,
        traj.z[start..].to_vec(),
        Unit::Meter,
    );
    let alpha = 7.5e3;
    let u = detection::apd_trace(&tail, alpha, 0.0, 9).unwrap();
    let a_volt = detection::drive_tone_amplitude(&u, 300.0).unwrap();
    let a_m = a_volt / alpha;
    assert!(
        ((a_m - expected) / expected).abs() < 0.05,
        "drive amplitude {a_m:.4e} vs F/(m Omega^2) = {expected:.4e}"
    );
}

#[test]
fn tls_estimator_runs_inside_scenario() {
    let mut scenario = bundled_scenario("drive_cal").unwrap();
    scenario.estimators = vec![EstimatorToml::Tls {
        gamma_rad_s: vec![TWO_PI * 37e-3, TWO_PI * 59e-6, TWO_PI * 5.9e-6, TWO_PI * 69e-9],
        gamma_sigma_rad_s: vec![TWO_PI * 9e-3, TWO_PI * 2e-6, TWO_PI * 0.2e-6, TWO_PI * 22e-9],
        pressure_mbar: vec![1.2e-4, 5.4e-8, 5e-9, 7e-11],
        pressure_sigma_mbar: vec![0.3 * 1.2e-4, 0.3 * 5.4e-8, 0.3 * 5e-9, 0.3 * 7e-11],
    }];
    let outcome = run_scenario(&scenario, None, None).unwrap();
    let a = outcome
        .fits
        .iter()
        .find(|(n, _)| n == "tls")
        .unwrap()
        .1
        .value("a_hz_per_mbar");
    assert!((a - 900.0).abs() < 200.0, "a = {a}");
}

/// Estimator failures are recorded per step without aborting the rest of
/// the chain.
#[test]
fn estimator_failures_are_recorded_not_fatal() {
    let mut scenario = bundled_scenario("drive_cal").unwrap();
    // The PLL cutoff check only triggers at runtime; the following PSD step
    // must still run.
    scenario.estimators = vec![
        EstimatorToml::Pll {
            cutoff_hz: 500.0,
            min_amplitude: 0.0,
        },
        EstimatorToml::Psd { segment_s: 0.5 },
    ];
    let outcome = run_scenario(&scenario, None, None).unwrap();
    assert_eq!(outcome.failures.len(), 1);
    assert!(outcome.failures[0].0 == "pll");
    assert!(outcome.fits.iter().any(|(n, _)| n == "psd"));
    assert!(outcome.report.contains("FAILED"));

    // Single-point TLS is caught by validation up front.
    let mut bad = bundled_scenario("drive_cal").unwrap();
    bad.estimators = vec![EstimatorToml::Tls {
        gamma_rad_s: vec![1.0],
        gamma_sigma_rad_s: vec![0.1],
        pressure_mbar: vec![1.0],
        pressure_sigma_mbar: vec![0.1],
    }];
    let err = bad.validate().unwrap_err();
    assert!(err.to_string().contains("tls estimator needs >= 2 points"));
}
