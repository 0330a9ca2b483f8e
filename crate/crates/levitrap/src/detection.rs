//! The two measurement channels and their inversions.
//!
//! APD channel: the confocal photodiode signal is proportional to the
//! particle displacement, `u(t) = α·z(t)`. Its variance calibrates to
//! energy through a ring-up fit of `σ(t) = a + (b − a)·e^{−γ·(t−t_fb)}`,
//! and a drive-tone measurement rescales the calibration across detector
//! gain changes.
//!
//! Camera channel: long-exposure images integrate the scattered light over
//! many oscillations; summing pixel columns gives a 1-D intensity profile
//! modeled as the arcsine dwell-time density of a harmonic oscillator,
//! modulated by a linear illumination slope and convolved with a Gaussian
//! point-spread function. A six-parameter nonlinear fit inverts the profile
//! to an oscillation amplitude.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::BOLTZMANN;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, FitResult, LmOptions, Param};
use crate::trace::{TimeTrace, Unit};

/// APD voltage-to-energy calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApdCalibration {
    /// Displacement responsivity α (V/m), `u = α·z`.
    pub alpha: f64,
    /// Fitted APD variance at `T_0` (V²); divides a variance series to
    /// express it in `k_B·T_0` units.
    pub variance_scale_a: f64,
    /// Drive-tone gain correction `(A'_cal/A'_meas)²`.
    pub rescale_factor: f64,
}

/// Synthesizes the APD voltage signal `u = α·z` plus optional white readout
/// noise of one-sided PSD `readout_noise_psd` (V²/Hz).
pub fn apd_trace(
    trace: &TimeTrace,
    alpha: f64,
    readout_noise_psd: f64,
    seed: u64,
) -> Result<TimeTrace> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if trace.unit != Unit::Meter {
        return Err(Error::invalid("apd_trace expects a position trace in metres"));
    }
    if readout_noise_psd < 0.0 {
        return Err(Error::invalid("readout noise PSD must be >= 0"));
    }
    let mut values: Vec<f64> = trace.values.iter().map(|z| alpha * z).collect();
    if readout_noise_psd > 0.0 {
        // White noise up to Nyquist: per-sample variance = PSD·fs/2.
        let sigma = (readout_noise_psd * trace.sample_rate() / 2.0).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for v in values.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
    }
    let mut out = TimeTrace::new(trace.t0, trace.dt, values, Unit::Volt);
    if let Some(lit) = &trace.lit {
        out = out.with_mask(lit.clone());
    }
    Ok(out)
}

/// Calibrates the APD from a ring-up variance series (V²).
///
/// `b` is fixed to the mean variance while feedback is active (`t < t_fb`);
/// `a` and `γ` are fitted on `t ≥ t_fb` with
/// `σ(t) = a + (b − a)·e^{−γ·(t − t_fb)}`. The mode temperature under
/// feedback follows as `T_fb = T_0·b/a` and the displacement responsivity
/// as `α = √(a·m·Ω_z²/(k_B·T_0))`.
pub fn calibrate_ringup(
    variance: &TimeTrace,
    t_fb: f64,
    t0_temperature: f64,
    mass: f64,
    omega_z: f64,
) -> Result<(ApdCalibration, FitResult)> {
    if variance.unit != Unit::VoltSquared {
        return Err(Error::invalid("calibration expects a variance series in V²"));
    }
    let cold: Vec<f64> = variance
        .lit_samples()
        .filter(|(t, _)| *t < t_fb)
        .map(|(_, v)| v)
        .collect();
    if cold.is_empty() {
        return Err(Error::invalid(
            "calibration needs samples before t_fb to fix b",
        ));
    }
    let b = cold.iter().sum::<f64>() / cold.len() as f64;
    let pts: Vec<(f64, f64)> = variance
        .lit_samples()
        .filter(|(t, _)| *t >= t_fb)
        .map(|(t, v)| (t - t_fb, v))
        .collect();
    if pts.len() < 4 {
        return Err(Error::invalid("calibration needs >= 4 samples after t_fb"));
    }

    let span = pts.last().unwrap().0;
    let tail = pts.len() * 4 / 5;
    let a0 = pts[tail..].iter().map(|(_, v)| v).sum::<f64>() / (pts.len() - tail) as f64;
    let residual = |p: &[f64], r: &mut [f64]| {
        let (a, gamma) = (p[0], p[1].abs());
        for (i, (t, v)) in pts.iter().enumerate() {
            r[i] = a + (b - a) * (-gamma * t).exp() - v;
        }
    };
    let lm = levenberg_marquardt(
        &residual,
        pts.len(),
        &[a0.max(b * 1.01), 2.0 / span],
        &LmOptions::default(),
    )?;
    let a = lm.params[0];
    let gamma = lm.params[1].abs();
    if !(a > 0.0) {
        return Err(Error::FitFailure {
            reason: format!("calibration variance scale came out non-positive ({a})"),
            iterations: lm.iterations,
            last_params: lm.params,
        });
    }
    let sigma_a = lm.covariance[0].sqrt();
    let sigma_gamma = lm.covariance[3].sqrt();
    // Flat series (a ≈ b) leaves γ unconstrained.
    let degenerate = (a - b).abs() < 1e-3 * a.abs() || sigma_gamma > 10.0 * gamma;

    let t_fb_kelvin = t0_temperature * b / a;
    let alpha = (a * mass * omega_z * omega_z / (BOLTZMANN * t0_temperature)).sqrt();
    let mut fit = FitResult {
        params: vec![
            Param {
                name: "variance_scale_a".into(),
                value: a,
                sigma: sigma_a,
            },
            Param {
                name: "gamma".into(),
                value: gamma,
                sigma: sigma_gamma,
            },
            Param {
                name: "t_fb_kelvin".into(),
                value: t_fb_kelvin,
                sigma: t_fb_kelvin * (sigma_a / a),
            },
        ],
        covariance: lm.covariance,
        residuals: lm.residuals,
        point_sigmas: vec![],
        mse: 0.0,
        mean_variance: 0.0,
        iterations: lm.iterations,
        degenerate,
        excess_noise: false,
    };
    fit.finalize_diagnostics(2);
    Ok((
        ApdCalibration {
            alpha,
            variance_scale_a: a,
            rescale_factor: 1.0,
        },
        fit,
    ))
}

/// Converts an APD variance series (V²) to energy in `k_B·T_0` units:
/// `E = (σ/a)·(A'_cal/A'_meas)²`.
pub fn apply_calibration(variance: &TimeTrace, cal: &ApdCalibration) -> Result<TimeTrace> {
    if variance.unit != Unit::VoltSquared {
        return Err(Error::invalid("calibration applies to a variance series in V²"));
    }
    let scale = cal.rescale_factor / cal.variance_scale_a;
    let values = variance.values.iter().map(|v| v * scale).collect();
    let mut out = TimeTrace::new(variance.t0, variance.dt, values, Unit::KbT0);
    if let Some(lit) = &variance.lit {
        out = out.with_mask(lit.clone());
    }
    Ok(out)
}

/// Amplitude of the spectral component at `f_cal`: a single-bin discrete
/// Fourier projection over the largest prefix holding a whole number of
/// drive periods (suppresses leakage).
pub fn drive_tone_amplitude(trace: &TimeTrace, f_cal: f64) -> Result<f64> {
    let fs = trace.sample_rate();
    if !(f_cal > 0.0) || f_cal >= fs / 2.0 {
        return Err(Error::invalid(format!(
            "calibration tone ({f_cal} Hz) must lie below Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    if trace.duration() * f_cal < 10.0 {
        return Err(Error::invalid(
            "drive tone measurement needs >= 10 periods of the tone",
        ));
    }
    let periods = (trace.duration() * f_cal).floor();
    let n = ((periods / f_cal) / trace.dt).round() as usize;
    let n = n.min(trace.len()).max(2);
    let two_pi = 2.0 * std::f64::consts::PI;
    let (mut re, mut im) = (0.0, 0.0);
    for i in 0..n {
        let (s, c) = (two_pi * f_cal * (i as f64) * trace.dt).sin_cos();
        re += trace.values[i] * c;
        im -= trace.values[i] * s;
    }
    Ok(2.0 * (re * re + im * im).sqrt() / n as f64)
}

/// Drive-tone gain correction `(A'_cal/A'_meas)²`.
pub fn rescale_factor(a_cal: f64, a_meas: f64) -> f64 {
    (a_cal / a_meas) * (a_cal / a_meas)
}

/// Uniform evaluation grid in pixel coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PixelGrid {
    /// Position of the first sample (px).
    pub origin: f64,
    /// Sample spacing (px); 1.0 for camera pixels.
    pub pitch: f64,
    pub len: usize,
}

impl PixelGrid {
    pub fn positions(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| self.origin + i as f64 * self.pitch)
            .collect()
    }

    pub fn last(&self) -> f64 {
        self.origin + (self.len.saturating_sub(1)) as f64 * self.pitch
    }
}

/// Exposure bookkeeping carried with synthesized camera frames.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExposureInfo {
    pub duration: f64,
    /// Exposure below ten oscillation periods; the dwell-time density is not
    /// well averaged.
    pub short_exposure: bool,
}

/// Time-integrated 1-D intensity profile along the oscillation axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntensityProfile {
    /// Pixel positions (px).
    pub positions: Vec<f64>,
    pub intensities: Vec<f64>,
    /// Metres per pixel.
    pub meter_per_pixel: f64,
    pub exposure: Option<ExposureInfo>,
}

impl IntensityProfile {
    pub fn grid(&self) -> Result<PixelGrid> {
        if self.positions.len() < 2 {
            return Err(Error::invalid("profile needs >= 2 samples"));
        }
        let pitch = self.positions[1] - self.positions[0];
        if !(pitch > 0.0) {
            return Err(Error::invalid("profile positions must increase"));
        }
        for w in self.positions.windows(2) {
            if ((w[1] - w[0]) - pitch).abs() > 1e-9 * pitch {
                return Err(Error::invalid("profile pixel pitch must be uniform"));
            }
        }
        Ok(PixelGrid {
            origin: self.positions[0],
            pitch,
            len: self.positions.len(),
        })
    }
}

/// Parameters of the intensity-profile model
/// `I(z) = I0·∫ P(z′)·exp[−2(z−z′)²/w²] dz′ + c` with the dwell-time
/// density `P(u) = (1 + b·u)/√(a² − u²)` for `|u| < a`, `u = z′ − z0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfileParams {
    pub i0: f64,
    /// Oscillation center (px).
    pub z0: f64,
    /// Gaussian image width (px).
    pub w: f64,
    /// Oscillation amplitude (px).
    pub amp_a: f64,
    /// Linear illumination slope (1/px).
    pub slope_b: f64,
    /// Background level.
    pub offset_c: f64,
}

/// Mass of the dwell-time density integrated over `[u1, u2]` (relative to
/// `z0`), clipped to the support `[−a, a]`:
/// `∫ (1 + b·u)/√(a² − u²) du = arcsin(u/a) − b·√(a² − u²)`.
fn density_cell_mass(a: f64, b: f64, u1: f64, u2: f64) -> f64 {
    let lo = u1.max(-a);
    let hi = u2.min(a);
    if hi <= lo {
        return 0.0;
    }
    let asin_term = (hi / a).clamp(-1.0, 1.0).asin() - (lo / a).clamp(-1.0, 1.0).asin();
    let sqrt_term = b * ((a * a - lo * lo).max(0.0).sqrt() - (a * a - hi * hi).max(0.0).sqrt());
    asin_term + sqrt_term
}

/// Convolves pre-integrated subcell masses with the Gaussian kernel and
/// averages back down to the output grid.
fn convolve_density(
    cell_mass: &[f64],
    sub_origin: f64,
    sub_pitch: f64,
    grid: &PixelGrid,
    oversample: usize,
    w: f64,
    i0: f64,
    c: f64,
) -> Vec<f64> {
    let n_sub = cell_mass.len();
    let span = (4.5 * w / sub_pitch).ceil() as isize;
    let inv_w2 = 2.0 / (w * w);
    let mut out = Vec::with_capacity(grid.len);
    for pix in 0..grid.len {
        let mut acc = 0.0;
        for s in 0..oversample {
            let idx = (pix * oversample + s) as isize;
            let z = sub_origin + idx as f64 * sub_pitch;
            let lo = (idx - span).max(0) as usize;
            let hi = ((idx + span) as usize).min(n_sub - 1);
            let mut conv = 0.0;
            for (j, m) in cell_mass[lo..=hi].iter().enumerate() {
                let u = sub_origin + (lo + j) as f64 * sub_pitch;
                let d = z - u;
                conv += m * (-d * d * inv_w2).exp();
            }
            acc += conv;
        }
        out.push(i0 * acc / oversample as f64 + c);
    }
    out
}

fn subcells(grid: &PixelGrid, w: f64) -> (f64, f64, usize) {
    // At least 8 sample points per Gaussian width.
    let oversample = ((8.0 * grid.pitch / w).ceil() as usize).max(1);
    let sub_pitch = grid.pitch / oversample as f64;
    let sub_origin = grid.origin - grid.pitch / 2.0 + sub_pitch / 2.0;
    (sub_origin, sub_pitch, oversample)
}

/// Renders the intensity-profile model on a pixel grid by numerical
/// convolution on an oversampled grid; the integrable singularity of the
/// dwell-time density is handled by analytic cell averaging.
pub fn render_profile(params: &ProfileParams, grid: &PixelGrid) -> Result<IntensityProfile> {
    render_profile_scaled(params, grid, 1.0)
}

fn render_profile_scaled(
    params: &ProfileParams,
    grid: &PixelGrid,
    meter_per_pixel: f64,
) -> Result<IntensityProfile> {
    let a = params.amp_a;
    let w = params.w;
    if !(a > 0.0) || !(w > 0.0) {
        return Err(Error::invalid("profile amplitude and width must be > 0"));
    }
    if grid.pitch > w / 4.0 {
        return Err(Error::invalid(format!(
            "grid too coarse: pitch {} exceeds w/4 = {}",
            grid.pitch,
            w / 4.0
        )));
    }
    if grid.origin > params.z0 - a - 4.0 * w || grid.last() < params.z0 + a + 4.0 * w {
        return Err(Error::invalid(
            "grid must cover [z0 - a - 4w, z0 + a + 4w]",
        ));
    }
    let (sub_origin, sub_pitch, oversample) = subcells(grid, w);
    let n_sub = grid.len * oversample;
    let cell_mass: Vec<f64> = (0..n_sub)
        .map(|j| {
            let u_lo = sub_origin + j as f64 * sub_pitch - sub_pitch / 2.0 - params.z0;
            density_cell_mass(a, params.slope_b, u_lo, u_lo + sub_pitch)
        })
        .collect();
    let intensities = convolve_density(
        &cell_mass,
        sub_origin,
        sub_pitch,
        grid,
        oversample,
        w,
        params.i0,
        params.offset_c,
    );
    Ok(IntensityProfile {
        positions: grid.positions(),
        intensities,
        meter_per_pixel,
        exposure: None,
    })
}

/// Local maxima with a prominence of at least `min_prominence` (absolute)
/// and a minimum separation, keeping the most prominent peak of each
/// cluster. Returns indices sorted by position.
pub fn find_peaks(values: &[f64], min_prominence: f64, min_separation: f64) -> Vec<usize> {
    let n = values.len();
    let mut candidates = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] {
            // Prominence: height above the highest of the two key saddles.
            let mut left_min = values[i];
            for j in (0..i).rev() {
                if values[j] > values[i] {
                    break;
                }
                left_min = left_min.min(values[j]);
            }
            let mut right_min = values[i];
            for &v in values.iter().skip(i + 1) {
                if v > values[i] {
                    break;
                }
                right_min = right_min.min(v);
            }
            let prominence = values[i] - left_min.max(right_min);
            if prominence >= min_prominence {
                candidates.push((i, prominence));
            }
        }
    }
    // Greedy separation filter, most prominent first.
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut kept: Vec<usize> = Vec::new();
    for (i, _) in candidates {
        if kept
            .iter()
            .all(|&k| (k as f64 - i as f64).abs() >= min_separation)
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Sub-sample peak position via parabolic interpolation of the three samples
/// around a discrete maximum.
fn refine_peak(values: &[f64], i: usize, origin: f64, pitch: f64) -> f64 {
    if i == 0 || i + 1 >= values.len() {
        return origin + i as f64 * pitch;
    }
    let (ym, y0, yp) = (values[i - 1], values[i], values[i + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let delta = if denom.abs() > 0.0 {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    origin + (i as f64 + delta) * pitch
}

/// Result of a profile fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFit {
    pub params: ProfileParams,
    pub fit: FitResult,
    /// Peak separation of the fitted model, evaluated on a fine grid (px).
    pub model_peak_separation: Option<f64>,
    /// Peak separation measured on the data by the peak finder (px).
    pub data_peak_separation: Option<f64>,
    /// `|d_model − d_PF|` (px); `None` when fewer than two data peaks exist.
    pub amplitude_uncertainty: Option<f64>,
}

const PEAK_PROMINENCE_FRACTION: f64 = 0.05;

/// Fits the six-parameter profile model to a measured intensity profile.
///
/// Initialization comes from the detected peaks: `z0` at their midpoint,
/// `a` at 1.1× the half separation, `w` from the peak width. The amplitude
/// uncertainty is the difference between the fitted model's peak separation
/// and the peak-finder separation on the data.
pub fn fit_profile(profile: &IntensityProfile) -> Result<ProfileFit> {
    let grid = profile.grid()?;
    let data = &profile.intensities;
    let range = data.iter().cloned().fold(f64::MIN, f64::max)
        - data.iter().cloned().fold(f64::MAX, f64::min);
    if !(range > 0.0) {
        return Err(Error::invalid("profile has no contrast"));
    }
    let prominence = PEAK_PROMINENCE_FRACTION * range;
    let peaks = find_peaks(data, prominence, 2.0);
    let c0 = data.iter().cloned().fold(f64::MAX, f64::min);

    let (z0_0, a_0, w_0) = match peaks.len() {
        0 => {
            return Err(Error::invalid(
                "no peaks detected; cannot initialize profile fit",
            ))
        }
        1 => {
            // Single broad maximum: a ≲ w.
            let i = peaks[0];
            let z0 = grid.origin + i as f64 * grid.pitch;
            let half = c0 + 0.5 * (data[i] - c0);
            let mut lo = i;
            while lo > 0 && data[lo] > half {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < data.len() && data[hi] > half {
                hi += 1;
            }
            let width = ((hi - lo) as f64 * grid.pitch).max(4.0 * grid.pitch);
            (z0, 0.5 * width, 0.5 * width)
        }
        _ => {
            // Two most prominent peaks bracket the oscillation.
            let (i, j) = two_major_peaks(data, &peaks);
            let pi = grid.origin + i as f64 * grid.pitch;
            let pj = grid.origin + j as f64 * grid.pitch;
            let sep = (pj - pi).abs();
            let w0 = estimate_peak_width(data, i, grid.pitch)
                .max(4.0 * grid.pitch)
                .min(0.5 * sep.max(8.0 * grid.pitch));
            (0.5 * (pi + pj), (0.55 * sep).max(2.0 * grid.pitch), w0)
        }
    };
    let i_peak = data.iter().cloned().fold(f64::MIN, f64::max);
    // Scale I0 so the unit-I0 model peak matches the data peak.
    let trial = ProfileParams {
        i0: 1.0,
        z0: z0_0,
        w: w_0,
        amp_a: a_0,
        slope_b: 0.0,
        offset_c: 0.0,
    };
    let unit_peak = model_on_grid(&trial, &grid)
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    let i0_0 = (i_peak - c0) / unit_peak;

    let x0 = [i0_0, z0_0, w_0, a_0, 0.0, c0];
    let clamp = |p: &[f64]| ProfileParams {
        i0: p[0],
        z0: p[1],
        w: p[2].abs().max(grid.pitch),
        amp_a: p[3].abs().max(grid.pitch * 0.5),
        slope_b: p[4],
        offset_c: p[5],
    };
    let residual = |p: &[f64], r: &mut [f64]| {
        let model = model_on_grid(&clamp(p), &grid);
        for (i, (m, d)) in model.iter().zip(data).enumerate() {
            r[i] = m - d;
        }
    };
    // Finite-difference scales: the illumination slope starts at zero, so
    // it needs an explicit magnitude (a slope of 1/a modulates the density
    // by order one across the support).
    let opts = LmOptions {
        param_scales: Some(vec![
            i0_0.abs().max(0.01),
            1.0,
            w_0,
            a_0,
            1.0 / a_0.max(1.0),
            range * 0.01,
        ]),
        ..LmOptions::default()
    };
    let lm = levenberg_marquardt(&residual, data.len(), &x0, &opts)?;
    let fitted = clamp(&lm.params);

    // Model and data peak separations for the amplitude uncertainty.
    let model_sep = model_peak_separation(&fitted);
    let data_sep = {
        let sep_peaks = find_peaks(data, prominence, fitted.w / grid.pitch);
        if sep_peaks.len() >= 2 {
            let (i, j) = two_major_peaks(data, &sep_peaks);
            Some(
                (refine_peak(data, j, grid.origin, grid.pitch)
                    - refine_peak(data, i, grid.origin, grid.pitch))
                .abs(),
            )
        } else {
            None
        }
    };
    let amplitude_uncertainty = match (model_sep, data_sep) {
        (Some(m), Some(d)) => Some((m - d).abs()),
        _ => None,
    };

    let names = ["i0", "z0", "w", "amp_a", "slope_b", "offset_c"];
    let values = [
        fitted.i0,
        fitted.z0,
        fitted.w,
        fitted.amp_a,
        fitted.slope_b,
        fitted.offset_c,
    ];
    let params: Vec<Param> = names
        .iter()
        .zip(values.iter())
        .enumerate()
        .map(|(k, (name, &value))| Param {
            name: (*name).into(),
            value,
            sigma: lm.covariance[k * 6 + k].max(0.0).sqrt(),
        })
        .collect();
    let mut fit = FitResult {
        params,
        covariance: lm.covariance,
        residuals: lm.residuals,
        point_sigmas: vec![],
        mse: 0.0,
        mean_variance: 0.0,
        iterations: lm.iterations,
        degenerate: false,
        excess_noise: false,
    };
    fit.finalize_diagnostics(6);
    Ok(ProfileFit {
        params: fitted,
        fit,
        model_peak_separation: model_sep,
        data_peak_separation: data_sep,
        amplitude_uncertainty,
    })
}

fn two_major_peaks(data: &[f64], peaks: &[usize]) -> (usize, usize) {
    let mut sorted: Vec<usize> = peaks.to_vec();
    sorted.sort_by(|&a, &b| data[b].partial_cmp(&data[a]).unwrap());
    let (mut i, mut j) = (sorted[0], sorted[1]);
    if i > j {
        std::mem::swap(&mut i, &mut j);
    }
    (i, j)
}

fn estimate_peak_width(data: &[f64], i: usize, pitch: f64) -> f64 {
    let c0 = data.iter().cloned().fold(f64::MAX, f64::min);
    let half = c0 + 0.5 * (data[i] - c0);
    let mut lo = i;
    while lo > 0 && data[lo] > half {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < data.len() && data[hi] > half {
        hi += 1;
    }
    // Gaussian FWHM = 1.177·w.
    ((hi - lo) as f64 * pitch / 1.177).max(pitch)
}

/// Model evaluated without the coverage/pitch validation (for fitting, where
/// intermediate iterates may wander).
fn model_on_grid(params: &ProfileParams, grid: &PixelGrid) -> Vec<f64> {
    let (sub_origin, sub_pitch, oversample) = subcells(grid, params.w);
    let n_sub = grid.len * oversample;
    let cell_mass: Vec<f64> = (0..n_sub)
        .map(|j| {
            let u_lo = sub_origin + j as f64 * sub_pitch - sub_pitch / 2.0 - params.z0;
            density_cell_mass(params.amp_a, params.slope_b, u_lo, u_lo + sub_pitch)
        })
        .collect();
    convolve_density(
        &cell_mass,
        sub_origin,
        sub_pitch,
        grid,
        oversample,
        params.w,
        params.i0,
        params.offset_c,
    )
}

/// Peak separation of the model profile, evaluated on a fine grid. Gaussian
/// smoothing pulls the maxima inside ±a, so the result is strictly less
/// than `2·amp_a`; `None` when the profile has a single maximum (a ≲ w).
pub fn model_peak_separation(params: &ProfileParams) -> Option<f64> {
    let pitch = (params.w / 8.0).min(params.amp_a / 16.0);
    let half = params.amp_a + 5.0 * params.w;
    let len = (2.0 * half / pitch).ceil() as usize + 1;
    let grid = PixelGrid {
        origin: params.z0 - half,
        pitch,
        len,
    };
    let model = model_on_grid(params, &grid);
    let range = model.iter().cloned().fold(f64::MIN, f64::max)
        - model.iter().cloned().fold(f64::MAX, f64::min);
    let peaks = find_peaks(&model, PEAK_PROMINENCE_FRACTION * range, params.w / pitch);
    if peaks.len() < 2 {
        return None;
    }
    let (i, j) = two_major_peaks(&model, &peaks);
    Some(
        (refine_peak(&model, j, grid.origin, pitch) - refine_peak(&model, i, grid.origin, pitch))
            .abs(),
    )
}

/// Mean `|d_model − d_PF|` over a measurement set, skipping profiles where
/// either separation was unavailable.
pub fn mean_amplitude_uncertainty(fits: &[ProfileFit]) -> Option<f64> {
    let vals: Vec<f64> = fits.iter().filter_map(|f| f.amplitude_uncertainty).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Camera and optics model for synthesizing frames from a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraConfig {
    pub meter_per_pixel: f64,
    /// Gaussian image width w (px).
    pub psf_width_px: f64,
    /// Overall intensity scale (plays the role of I0).
    pub gain: f64,
    /// Background level c.
    pub background: f64,
    /// Linear illumination slope (1/px), relative to `center_px`.
    pub illumination_slope: f64,
    /// Pixel coordinate of the trap center.
    pub center_px: f64,
    pub grid: PixelGrid,
    /// Oscillation period (s), for the exposure sanity flag.
    pub oscillation_period: f64,
}

/// Integrates a trace segment into a camera intensity profile: the
/// position histogram (weighted by the illumination slope) convolved with
/// the Gaussian point-spread function. For a pure sinusoid and a long
/// exposure this converges to [`render_profile`] with the matching
/// parameters, since the dwell-time histogram of a sinusoid is the arcsine
/// density.
pub fn camera_frame_from_trace(
    trace: &TimeTrace,
    window_start: f64,
    window_end: f64,
    cam: &CameraConfig,
) -> Result<IntensityProfile> {
    if trace.unit != Unit::Meter {
        return Err(Error::invalid("camera synthesis expects a position trace"));
    }
    let grid = cam.grid;
    if grid.pitch > cam.psf_width_px / 4.0 {
        return Err(Error::invalid(
            "camera grid too coarse for the PSF width (pitch > w/4)",
        ));
    }
    let (sub_origin, sub_pitch, oversample) = subcells(&grid, cam.psf_width_px);
    let n_sub = grid.len * oversample;
    let mut counts = vec![0.0_f64; n_sub];
    let mut n_samples = 0usize;
    for (t, z) in trace.lit_samples() {
        if t < window_start || t >= window_end {
            continue;
        }
        let p = cam.center_px + z / cam.meter_per_pixel;
        let idx = ((p - sub_origin) / sub_pitch).round();
        if idx >= 0.0 && (idx as usize) < n_sub {
            let weight = 1.0 + cam.illumination_slope * (p - cam.center_px);
            counts[idx as usize] += weight.max(0.0);
            n_samples += 1;
        }
    }
    if n_samples == 0 {
        return Err(Error::invalid(
            "no lit samples inside the requested exposure window",
        ));
    }
    // Normalize the histogram mass to π, matching the bare arcsine density.
    let total: f64 = counts.iter().sum();
    let scale = std::f64::consts::PI / total;
    for c in counts.iter_mut() {
        *c *= scale;
    }
    let intensities = convolve_density(
        &counts,
        sub_origin,
        sub_pitch,
        &grid,
        oversample,
        cam.psf_width_px,
        cam.gain,
        cam.background,
    );
    let duration = n_samples as f64 * trace.dt;
    Ok(IntensityProfile {
        positions: grid.positions(),
        intensities,
        meter_per_pixel: cam.meter_per_pixel,
        exposure: Some(ExposureInfo {
            duration,
            short_exposure: duration < 10.0 * cam.oscillation_period,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine_trace(amp: f64, f: f64, fs: f64, duration: f64) -> TimeTrace {
        let n = (duration * fs) as usize;
        let values = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter)
    }

    #[test]
    fn apd_identity_and_scaling() {
        let trace = sine_trace(2.0e-6, 1280.0, 20480.0, 0.1);
        let u = apd_trace(&trace, 1.0, 0.0, 0).unwrap();
        assert_eq!(u.values, trace.values);
        let u5 = apd_trace(&trace, 5.0e3, 0.0, 0).unwrap();
        let peak = u5.values.iter().cloned().fold(f64::MIN, f64::max);
        assert_relative_eq!(peak, 5.0e3 * 2.0e-6, max_relative = 1e-3);
    }

    #[test]
    fn apd_variance_tracks_position_variance() {
        let trace = sine_trace(1.0e-6, 1280.0, 20480.0, 1.0);
        let alpha = 3.3e3;
        let u = apd_trace(&trace, alpha, 0.0, 0).unwrap();
        let vz: f64 = trace.values.iter().map(|z| z * z).sum::<f64>() / trace.len() as f64;
        let vu: f64 = u.values.iter().map(|v| v * v).sum::<f64>() / u.len() as f64;
        assert_relative_eq!(vu, alpha * alpha * vz, max_relative = 1e-12);
    }

    #[test]
    fn drive_tone_amplitude_pure_and_noisy() {
        let fs = 20480.0;
        let f_cal = 300.0;
        let n = (2.0 * fs) as usize;
        let clean: Vec<f64> = (0..n)
            .map(|i| 2.0 * (2.0 * std::f64::consts::PI * f_cal * i as f64 / fs + 0.7).sin())
            .collect();
        let trace = TimeTrace::new(0.0, 1.0 / fs, clean.clone(), Unit::Volt);
        let a = drive_tone_amplitude(&trace, f_cal).unwrap();
        assert_relative_eq!(a, 2.0, max_relative = 0.01);

        // SNR 100 in amplitude.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let noisy: Vec<f64> = clean
            .iter()
            .map(|v| v + 0.02 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let trace_n = TimeTrace::new(0.0, 1.0 / fs, noisy, Unit::Volt);
        let an = drive_tone_amplitude(&trace_n, f_cal).unwrap();
        assert_relative_eq!(an, 2.0, max_relative = 0.02);

        assert!(drive_tone_amplitude(&trace, fs).is_err());
    }

    #[test]
    fn rescale_factor_matches_reference() {
        assert_relative_eq!(rescale_factor(5.49, 1.0), 30.1, max_relative = 2e-3);
    }

    fn reference_grid() -> PixelGrid {
        PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len: 380,
        }
    }

    fn reference_params() -> ProfileParams {
        // Parameters of the published dark-purple profile fit.
        ProfileParams {
            i0: 2.1,
            z0: 188.5,
            w: 8.2,
            amp_a: 74.5,
            slope_b: 1.0e-3,
            offset_c: 0.106,
        }
    }

    #[test]
    fn rendered_reference_profile_is_double_peaked() {
        let profile = render_profile(&reference_params(), &reference_grid()).unwrap();
        let range = profile.intensities.iter().cloned().fold(f64::MIN, f64::max)
            - profile.intensities.iter().cloned().fold(f64::MAX, f64::min);
        let peaks = find_peaks(&profile.intensities, 0.05 * range, 8.0);
        assert_eq!(peaks.len(), 2, "expected two maxima");
        let sep = model_peak_separation(&reference_params()).unwrap();
        assert!(
            sep < 2.0 * 74.5,
            "separation {sep} must be below 2a from Gaussian smoothing"
        );
        assert!(sep > 74.5, "separation {sep} unreasonably small");
    }

    #[test]
    fn render_is_symmetric_for_flat_illumination() {
        let mut p = reference_params();
        p.slope_b = 0.0;
        p.z0 = 189.5; // on-grid center so mirror pixels exist
        let profile = render_profile(&p, &reference_grid()).unwrap();
        let v = &profile.intensities;
        let n = v.len();
        let center = p.z0 - profile.positions[0];
        let mut max_asym: f64 = 0.0;
        for i in 0..n {
            let mirror = 2.0 * center - i as f64;
            if mirror >= 0.0 && mirror.fract().abs() < 1e-9 && (mirror as usize) < n {
                max_asym = max_asym.max((v[i] - v[mirror as usize]).abs());
            }
        }
        assert!(max_asym < 1e-10, "asymmetry {max_asym}");
    }

    #[test]
    fn narrow_psf_approaches_bare_density() {
        // w → 0 limit: the convolution reproduces the cell-averaged arcsine
        // density away from the edge singularities.
        let a = 40.0;
        let w = 0.4;
        let grid = PixelGrid {
            origin: -60.0,
            pitch: 0.1,
            len: 1201,
        };
        let params = ProfileParams {
            i0: 1.0,
            z0: 0.0,
            w,
            amp_a: a,
            slope_b: 0.0,
            offset_c: 0.0,
        };
        let profile = render_profile(&params, &grid).unwrap();
        // Compare against the bare density integrated over each pixel cell,
        // scaled by the kernel mass √(π/2)·w.
        let kernel_mass = (std::f64::consts::PI / 2.0).sqrt() * w;
        for (i, &z) in profile.positions.iter().enumerate() {
            if z.abs() < 0.8 * a {
                let bare = density_cell_mass(a, 0.0, z - 0.05, z + 0.05) / 0.1;
                let conv = profile.intensities[i] / kernel_mass;
                assert_relative_eq!(conv, bare, max_relative = 0.02);
            }
        }
    }

    #[test]
    fn render_rejects_bad_grids() {
        let p = reference_params();
        let coarse = PixelGrid {
            origin: 0.0,
            pitch: 3.0,
            len: 127,
        };
        assert!(render_profile(&p, &coarse).is_err());
        let short = PixelGrid {
            origin: 150.0,
            pitch: 1.0,
            len: 60,
        };
        assert!(render_profile(&p, &short).is_err());
    }

    #[test]
    fn fit_recovers_reference_parameters_from_clean_render() {
        let truth = reference_params();
        let profile = render_profile(&truth, &reference_grid()).unwrap();
        let fit = fit_profile(&profile).unwrap();
        assert_relative_eq!(fit.params.amp_a, truth.amp_a, max_relative = 0.01);
        assert_relative_eq!(fit.params.z0, truth.z0, max_relative = 0.01);
        assert_relative_eq!(fit.params.w, truth.w, max_relative = 0.01);
        assert_relative_eq!(fit.params.i0, truth.i0, max_relative = 0.01);
        assert_relative_eq!(fit.params.offset_c, truth.offset_c, max_relative = 0.01);
        assert!((fit.params.slope_b - truth.slope_b).abs() < 1e-4);
        // Clean data: model and data peak separations nearly coincide.
        let da = fit.amplitude_uncertainty.unwrap();
        assert!(da < 0.5, "clean-data amplitude uncertainty {da} px");
    }

    #[test]
    fn fit_flags_missing_second_peak() {
        // a ≪ w: single broad maximum, no d_PF branch.
        let p = ProfileParams {
            i0: 1.5,
            z0: 100.0,
            w: 12.0,
            amp_a: 3.0,
            slope_b: 0.0,
            offset_c: 0.05,
        };
        let grid = PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len: 201,
        };
        let profile = render_profile(&p, &grid).unwrap();
        let fit = fit_profile(&profile).unwrap();
        assert!(fit.amplitude_uncertainty.is_none());
    }

    #[test]
    fn camera_frame_matches_render_for_pure_sinusoid() {
        let meter_per_pixel = 1.35e-6;
        let amp_px = 60.0;
        let amp_m = amp_px * meter_per_pixel;
        let f = 1280.0;
        // Sample rate incommensurate with the tone so the phases fill the
        // dwell-time density instead of hitting a fixed comb.
        let trace = sine_trace(amp_m, f, 102411.0, 2.0);
        let grid = PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len: 301,
        };
        let cam = CameraConfig {
            meter_per_pixel,
            psf_width_px: 8.0,
            gain: 2.0,
            background: 0.1,
            illumination_slope: 0.0,
            center_px: 150.0,
            grid,
            oscillation_period: 1.0 / f,
        };
        let frame = camera_frame_from_trace(&trace, 0.0, 2.0, &cam).unwrap();
        assert!(!frame.exposure.unwrap().short_exposure);

        let params = ProfileParams {
            i0: 2.0,
            z0: 150.0,
            w: 8.0,
            amp_a: amp_px,
            slope_b: 0.0,
            offset_c: 0.1,
        };
        let reference = render_profile(&params, &grid).unwrap();
        let peak = reference
            .intensities
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        let l2: f64 = frame
            .intensities
            .iter()
            .zip(&reference.intensities)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / (frame.intensities.len() as f64).sqrt();
        assert!(
            l2 < 0.01 * peak,
            "histogram vs render L2 deviation {l2} exceeds 1% of peak {peak}"
        );
    }

    #[test]
    fn camera_frame_of_stationary_particle_is_a_gaussian_spot() {
        let meter_per_pixel = 1.0e-6;
        let trace = TimeTrace::new(0.0, 1e-4, vec![0.0; 20000], Unit::Meter);
        let grid = PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len: 101,
        };
        let cam = CameraConfig {
            meter_per_pixel,
            psf_width_px: 6.0,
            gain: 1.0,
            background: 0.0,
            illumination_slope: 0.0,
            center_px: 50.0,
            grid,
            oscillation_period: 1.0 / 1280.0,
        };
        let frame = camera_frame_from_trace(&trace, 0.0, 2.0, &cam).unwrap();
        // Single peak at the center with a Gaussian falloff of width w:
        // the full width at half maximum of exp(-2d²/w²) is w·√(2·ln2).
        let peaks = find_peaks(&frame.intensities, 0.05, 3.0);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0], 50);
        let peak = frame.intensities[50];
        let half = 0.5 * peak;
        let crossing = |range: &mut dyn Iterator<Item = usize>| -> f64 {
            let mut prev = 50usize;
            for i in range {
                if frame.intensities[i] < half {
                    let (y0, y1) = (frame.intensities[prev], frame.intensities[i]);
                    let frac = (y0 - half) / (y0 - y1);
                    return prev as f64 + frac * (i as f64 - prev as f64);
                }
                prev = i;
            }
            panic!("no half-maximum crossing found");
        };
        let right = crossing(&mut (51..101));
        let left = crossing(&mut (0..50).rev());
        let fwhm = right - left;
        let expected = 6.0 * (2.0 * 2.0_f64.ln()).sqrt();
        assert_relative_eq!(fwhm, expected, max_relative = 0.08);
    }

    #[test]
    fn camera_frame_of_decaying_amplitude_fits_in_between() {
        // Amplitude shrinking from 60 px to 40 px during the exposure.
        let meter_per_pixel = 1.0e-6;
        let fs = 102400.0;
        let f = 1280.0;
        let n = (2.0 * fs) as usize;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let amp = (60.0 - 10.0 * t) * meter_per_pixel;
                amp * (2.0 * std::f64::consts::PI * f * t).sin()
            })
            .collect();
        let trace = TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter);
        let grid = PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len: 301,
        };
        let cam = CameraConfig {
            meter_per_pixel,
            psf_width_px: 8.0,
            gain: 2.0,
            background: 0.1,
            illumination_slope: 0.0,
            center_px: 150.0,
            grid,
            oscillation_period: 1.0 / f,
        };
        let frame = camera_frame_from_trace(&trace, 0.0, 2.0, &cam).unwrap();
        let fit = fit_profile(&frame).unwrap();
        assert!(
            fit.params.amp_a > 40.0 && fit.params.amp_a < 60.0,
            "fitted amplitude {} outside the [40, 60] px exposure range",
            fit.params.amp_a
        );
    }

    #[test]
    fn calibration_recovers_known_parameters() {
        // Synthetic ensemble-mean variance series exactly on the model.
        let alpha = 5.0e3;
        let mass = 4.3e-17;
        let omega = 2.0 * std::f64::consts::PI * 1280.0;
        let t0 = 300.0;
        let gamma = 0.23;
        let t_fb = 0.5;
        let a_true = alpha * alpha * BOLTZMANN * t0 / (mass * omega * omega);
        let b_true = a_true / 300.0; // T_fb = 1 K
        let dt = 0.1;
        let values: Vec<f64> = (0..105)
            .map(|i| {
                let t = (i as f64 + 0.5) * dt;
                if t < t_fb {
                    b_true
                } else {
                    a_true + (b_true - a_true) * (-gamma * (t - t_fb)).exp()
                }
            })
            .collect();
        let trace = TimeTrace::new(0.05, dt, values, Unit::VoltSquared);
        let (cal, fit) = calibrate_ringup(&trace, t_fb, t0, mass, omega).unwrap();
        assert_relative_eq!(fit.value("gamma"), gamma, max_relative = 1e-6);
        assert_relative_eq!(fit.value("t_fb_kelvin"), 1.0, max_relative = 1e-6);
        assert_relative_eq!(cal.alpha, alpha, max_relative = 1e-6);
        assert!(!fit.degenerate);

        // Energy calibration: variance at T0 maps to 1 kBT0.
        let flat = TimeTrace::new(0.0, dt, vec![a_true; 10], Unit::VoltSquared);
        let e = apply_calibration(&flat, &cal).unwrap();
        assert_relative_eq!(e.values[0], 1.0, max_relative = 1e-6);
    }

    #[test]
    fn flat_calibration_series_is_degenerate() {
        let values = vec![2.5e-5; 100];
        let trace = TimeTrace::new(0.05, 0.1, values, Unit::VoltSquared);
        let (_, fit) = calibrate_ringup(
            &trace,
            0.5,
            300.0,
            4.3e-17,
            2.0 * std::f64::consts::PI * 1280.0,
        )
        .unwrap();
        assert!(fit.degenerate, "flat series must be flagged degenerate");
        assert_relative_eq!(fit.value("t_fb_kelvin"), 300.0, max_relative = 1e-3);
    }
}
