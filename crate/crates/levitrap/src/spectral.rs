//! Frequency-stability tooling: non-overlapping Allan deviation, PLL-based
//! instantaneous-frequency extraction, linear drift estimation, and an
//! averaged-periodogram PSD helper.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::weighted_line_fit;
use crate::trace::TimeTrace;

/// Instantaneous-frequency series extracted from a position trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencySeries {
    pub times: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// Nominal oscillator frequency `f_z` (Hz).
    pub nominal_frequency: f64,
    /// `false` where the demodulated amplitude was below detectability.
    pub valid: Vec<bool>,
}

impl FrequencySeries {
    pub fn new(times: Vec<f64>, frequencies: Vec<f64>, nominal_frequency: f64) -> Self {
        let n = times.len();
        assert_eq!(frequencies.len(), n);
        FrequencySeries {
            times,
            frequencies,
            nominal_frequency,
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Sample spacing; errors if the time grid is not uniform.
    pub fn dt(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(Error::invalid("frequency series needs >= 2 samples"));
        }
        let dt = self.times[1] - self.times[0];
        if !(dt > 0.0) {
            return Err(Error::invalid("frequency series times must increase"));
        }
        for w in self.times.windows(2) {
            let d = w[1] - w[0];
            if (d - dt).abs() > 1e-6 * dt {
                return Err(Error::invalid("frequency series must be uniformly sampled"));
            }
        }
        Ok(dt)
    }

    pub fn duration(&self) -> Result<f64> {
        Ok(self.len() as f64 * self.dt()?)
    }
}

/// One Allan-deviation point. `sigma` is `None` when the averaging time
/// leaves fewer than two intervals and the point was skipped.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AllanPoint {
    /// Requested averaging time (s).
    pub tau: f64,
    /// Realized averaging time after rounding to whole samples (s).
    pub tau_actual: f64,
    pub sigma: Option<f64>,
    /// Standard error of `sigma` from the scatter of the squared first
    /// differences (`None` when fewer than three intervals).
    pub sigma_stderr: Option<f64>,
    pub intervals: usize,
}

/// Non-overlapping Allan deviation of a fractional frequency record:
///
/// `σ(τ) = √[ 1/(2·f_z²) · 1/(N−1) · Σ_{k=2}^{N} (f̄_k − f̄_{k−1})² ]`
///
/// with `N(τ) = ⌊t_f/τ⌋` contiguous intervals of duration τ; the trailing
/// partial interval is discarded.
pub fn allan_deviation(series: &FrequencySeries, taus: &[f64]) -> Result<Vec<AllanPoint>> {
    let dt = series.dt()?;
    allan_deviation_from_samples(&series.frequencies, dt, series.nominal_frequency, taus)
}

/// [`allan_deviation`] on a raw uniformly-sampled frequency record.
pub fn allan_deviation_from_samples(
    samples: &[f64],
    dt: f64,
    nominal_frequency: f64,
    taus: &[f64],
) -> Result<Vec<AllanPoint>> {
    if samples.len() < 2 {
        return Err(Error::invalid("Allan deviation needs >= 2 samples"));
    }
    if !(nominal_frequency > 0.0) {
        return Err(Error::invalid("nominal frequency must be > 0"));
    }
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
        }
        let block = (tau / dt).round().max(1.0) as usize;
        let n_intervals = samples.len() / block;
        let tau_actual = block as f64 * dt;
        if n_intervals < 2 {
            out.push(AllanPoint {
                tau,
                tau_actual,
                sigma: None,
                sigma_stderr: None,
                intervals: n_intervals,
            });
            continue;
        }
        let means: Vec<f64> = (0..n_intervals)
            .map(|k| {
                samples[k * block..(k + 1) * block].iter().sum::<f64>() / block as f64
            })
            .collect();
        let sq_diffs: Vec<f64> = means.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).collect();
        let m = sq_diffs.iter().sum::<f64>() / sq_diffs.len() as f64;
        let sigma = (m / (2.0 * nominal_frequency * nominal_frequency)).sqrt();
        let stderr = if sq_diffs.len() >= 2 && m > 0.0 {
            let var =
                sq_diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (sq_diffs.len() - 1) as f64;
            let se_m = (var / sq_diffs.len() as f64).sqrt();
            // σ = √(M/2f²): δσ = σ·δM/(2M)
            Some(sigma * se_m / (2.0 * m))
        } else {
            None
        };
        out.push(AllanPoint {
            tau,
            tau_actual,
            sigma: Some(sigma),
            sigma_stderr: stderr,
            intervals: n_intervals,
        });
    }
    Ok(out)
}

/// Octave-spaced τ values from `2·dt` up to half the record length.
pub fn default_taus(dt: f64, duration: f64) -> Vec<f64> {
    let mut taus = Vec::new();
    let mut tau = 2.0 * dt;
    while tau <= duration / 2.0 {
        taus.push(tau);
        tau *= 2.0;
    }
    taus
}

/// Options for [`pll_extract_with`].
#[derive(Debug, Clone)]
pub struct PllOptions {
    /// Low-pass cutoff (Hz) of the quadrature filters.
    pub cutoff: f64,
    /// Demodulated-amplitude threshold (`|X| + |Y|`, same units as the
    /// trace) below which samples are flagged invalid. Zero disables.
    pub min_amplitude: f64,
    /// Output decimation factor; `None` decimates to ≈ 8× the cutoff.
    pub decimate: Option<usize>,
}

/// Quadrature-demodulation frequency extraction.
///
/// The trace is mixed with two out-of-phase local oscillators at `f_z`,
/// low-pass filtered (second-order single-pole-squared IIR, applied forward
/// then backward for zero phase delay), converted to a phase via the
/// four-quadrant arctangent with unwrapping, and differentiated:
/// `f = f_z + (dφ/dt)/2π`, decimated to the filter bandwidth.
pub fn pll_extract(trace: &TimeTrace, f_z: f64, cutoff: f64) -> Result<FrequencySeries> {
    pll_extract_with(
        trace,
        f_z,
        &PllOptions {
            cutoff,
            min_amplitude: 0.0,
            decimate: None,
        },
    )
}

pub fn pll_extract_with(
    trace: &TimeTrace,
    f_z: f64,
    opts: &PllOptions,
) -> Result<FrequencySeries> {
    let fs = trace.sample_rate();
    if !(fs > 4.0 * f_z) {
        return Err(Error::invalid(format!(
            "PLL requires sample rate > 4·f_z ({} <= {})",
            fs,
            4.0 * f_z
        )));
    }
    if !(opts.cutoff > 0.0 && opts.cutoff < f_z / 10.0) {
        return Err(Error::invalid(format!(
            "PLL cutoff must be in (0, f_z/10), got {}",
            opts.cutoff
        )));
    }
    let n = trace.len();
    if n < 16 {
        return Err(Error::invalid("trace too short for PLL extraction"));
    }

    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t = trace.time(i);
        let (s, c) = (two_pi * f_z * t).sin_cos();
        x.push(2.0 * trace.values[i] * c);
        y.push(-2.0 * trace.values[i] * s);
    }
    let alpha = 1.0 - (-two_pi * opts.cutoff / fs).exp();
    lowpass_zero_phase(&mut x, alpha);
    lowpass_zero_phase(&mut y, alpha);

    // Phase unwrap and central-difference derivative.
    let mut phase = Vec::with_capacity(n);
    let mut prev = f64::atan2(y[0], x[0]);
    let mut acc = prev;
    phase.push(acc);
    for i in 1..n {
        let p = f64::atan2(y[i], x[i]);
        let mut d = p - prev;
        while d > std::f64::consts::PI {
            d -= two_pi;
        }
        while d < -std::f64::consts::PI {
            d += two_pi;
        }
        acc += d;
        prev = p;
        phase.push(acc);
    }
    let dt = trace.dt;
    let mut freq = vec![0.0; n];
    for i in 0..n {
        let dphi = if i == 0 {
            phase[1] - phase[0]
        } else if i == n - 1 {
            phase[n - 1] - phase[n - 2]
        } else {
            (phase[i + 1] - phase[i - 1]) / 2.0
        };
        freq[i] = f_z + dphi / (two_pi * dt);
    }

    let decimate = opts
        .decimate
        .unwrap_or_else(|| ((fs / (8.0 * opts.cutoff)).floor() as usize).max(1));
    let mut times = Vec::new();
    let mut frequencies = Vec::new();
    let mut valid = Vec::new();
    let mut i = decimate / 2;
    while i < n {
        times.push(trace.time(i));
        frequencies.push(freq[i]);
        valid.push(opts.min_amplitude <= 0.0 || (x[i].abs() + y[i].abs()) >= opts.min_amplitude);
        i += decimate;
    }
    Ok(FrequencySeries {
        times,
        frequencies,
        nominal_frequency: f_z,
        valid,
    })
}

/// Two cascaded one-pole IIR sections, run forward then backward.
fn lowpass_zero_phase(data: &mut [f64], alpha: f64) {
    let pass = |d: &mut [f64]| {
        for _ in 0..2 {
            let mut s = d[0];
            for v in d.iter_mut() {
                s += alpha * (*v - s);
                *v = s;
            }
        }
    };
    pass(data);
    data.reverse();
    pass(data);
    data.reverse();
}

/// Ordinary least-squares linear drift of a frequency series, Hz/s with 1σ.
pub fn drift_fit(series: &FrequencySeries) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.frequencies)
        .zip(&series.valid)
        .filter(|(_, &v)| v)
        .map(|((t, f), _)| (*t, *f))
        .collect();
    if pts.len() < 10 {
        return Err(Error::invalid("drift fit needs >= 10 valid samples"));
    }
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let f: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let w = vec![1.0; t.len()];
    let line = weighted_line_fit(&t, &f, &w)?;
    Ok((line.slope, line.slope_sigma))
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    /// Bin width (Hz).
    pub df: f64,
    pub segments: usize,
}

impl Psd {
    /// Total power `∫ S df`, for Parseval checks.
    pub fn integrated_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.df
    }

    /// Power integrated over `[f_lo, f_hi]`.
    pub fn band_power(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, v)| v)
            .sum::<f64>()
            * self.df
    }

    /// Mean density over `[f_lo, f_hi]`.
    pub fn band_mean(&self, f_lo: f64, f_hi: f64) -> f64 {
        let vals: Vec<f64> = self
            .frequencies
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, v)| *v)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Averaged-periodogram (Bartlett) one-sided PSD with a Hann window over
/// non-overlapping segments of `segment_len` samples. Normalized so that
/// the integral of the PSD equals the mean-square signal (Parseval).
pub fn psd(trace: &TimeTrace, segment_len: usize) -> Result<Psd> {
    if segment_len < 8 {
        return Err(Error::invalid("PSD segment length must be >= 8 samples"));
    }
    let n_segments = trace.len() / segment_len;
    if n_segments < 2 {
        return Err(Error::invalid(format!(
            "trace too short: need >= 2 segments of {segment_len} samples, have {}",
            trace.len()
        )));
    }
    let fs = trace.sample_rate();
    let window: Vec<f64> = (0..segment_len)
        .map(|j| {
            0.5 * (1.0
                - (2.0 * std::f64::consts::PI * j as f64 / (segment_len - 1) as f64).cos())
        })
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(segment_len);
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0_f64; n_bins];
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); segment_len];

    for s in 0..n_segments {
        for j in 0..segment_len {
            buf[j] = Complex::new(trace.values[s * segment_len + j] * window[j], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            let p = buf[k].norm_sqr() / (fs * window_power);
            // One-sided: double everything except DC and Nyquist.
            let one_sided = if k == 0 || (segment_len % 2 == 0 && k == segment_len / 2) {
                p
            } else {
                2.0 * p
            };
            acc[k] += one_sided;
        }
    }
    for v in acc.iter_mut() {
        *v /= n_segments as f64;
    }
    let df = fs / segment_len as f64;
    Ok(Psd {
        frequencies: (0..n_bins).map(|k| k as f64 * df).collect(),
        values: acc,
        df,
        segments: n_segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Unit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn allan_of_constant_frequency_is_zero() {
        let samples = vec![1280.0; 4096];
        let pts = allan_deviation_from_samples(&samples, 0.1, 1280.0, &[0.2, 1.0, 10.0]).unwrap();
        for p in pts {
            assert_eq!(p.sigma, Some(0.0));
        }
    }

    #[test]
    fn allan_of_alternating_blocks_matches_hand_value() {
        // Blocks of length τ alternating f₁, f₂: every first difference is
        // ±(f₂−f₁), so σ(τ) = |f₂−f₁|/(√2·f_z).
        let (f1, f2) = (1280.1, 1279.9);
        let block = 50usize;
        let dt = 0.02; // τ = 1 s
        let mut samples = Vec::new();
        for k in 0..40 {
            let f = if k % 2 == 0 { f1 } else { f2 };
            samples.extend(std::iter::repeat(f).take(block));
        }
        let pts = allan_deviation_from_samples(&samples, dt, 1280.0, &[1.0]).unwrap();
        let expected = (f2 - f1).abs() / (2.0_f64.sqrt() * 1280.0);
        // Block means accumulate ~n·ulp rounding, so compare at 1e-9.
        assert_relative_eq!(pts[0].sigma.unwrap(), expected, max_relative = 1e-9);
    }

    #[test]
    fn allan_invariant_under_constant_offset() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..8192)
            .map(|_| 1280.0 + 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let shifted: Vec<f64> = samples.iter().map(|f| f + 3.5).collect();
        let taus = [0.5, 2.0, 8.0];
        let a = allan_deviation_from_samples(&samples, 0.1, 1280.0, &taus).unwrap();
        let b = allan_deviation_from_samples(&shifted, 0.1, 1280.0, &taus).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_relative_eq!(pa.sigma.unwrap(), pb.sigma.unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn allan_skips_taus_with_too_few_intervals() {
        let samples = vec![1280.0; 100];
        let pts = allan_deviation_from_samples(&samples, 0.1, 1280.0, &[9.0]).unwrap();
        assert!(pts[0].sigma.is_none());
        assert_eq!(pts[0].intervals, 1);
    }

    #[test]
    fn allan_white_fm_slope_is_minus_half() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000;
        let dt = 0.01;
        let samples: Vec<f64> = (0..n)
            .map(|_| 1280.0 + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let taus: Vec<f64> = (0..=10).map(|k| 0.05 * 2f64.powi(k)).collect();
        let pts = allan_deviation_from_samples(&samples, dt, 1280.0, &taus).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for p in &pts {
            if let Some(s) = p.sigma {
                xs.push(p.tau_actual.ln());
                ys.push(s.ln());
            }
        }
        let w = vec![1.0; xs.len()];
        let line = weighted_line_fit(&xs, &ys, &w).unwrap();
        assert!(
            (line.slope + 0.5).abs() < 0.05,
            "log-log slope {} should be -0.5 ± 0.05",
            line.slope
        );
    }

    fn tone_trace(f: f64, fs: f64, duration: f64, amp: f64) -> TimeTrace {
        let n = (duration * fs) as usize;
        let values = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs).cos())
            .collect();
        TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter)
    }

    #[test]
    fn pll_tracks_a_detuned_tone() {
        let f_z = 1280.0;
        let fs = 16.0 * f_z;
        let trace = tone_trace(f_z + 0.3, fs, 30.0, 1e-6);
        let series = pll_extract(&trace, f_z, 5.0).unwrap();
        // Skip the filter settling at both ends.
        let n = series.len();
        let core = &series.frequencies[n / 5..4 * n / 5];
        for f in core {
            assert!(
                (f - (f_z + 0.3)).abs() < 1e-3,
                "frequency {f} not within 1 mHz of {}",
                f_z + 0.3
            );
        }
    }

    #[test]
    fn pll_rejects_bad_rates_and_cutoffs() {
        let trace = tone_trace(1280.0, 3000.0, 1.0, 1.0);
        assert!(pll_extract(&trace, 1280.0, 5.0).is_err());
        let trace = tone_trace(1280.0, 20480.0, 1.0, 1.0);
        assert!(pll_extract(&trace, 1280.0, 200.0).is_err());
    }

    #[test]
    fn pll_flags_low_amplitude_gaps() {
        let f_z = 1280.0;
        let fs = 16.0 * f_z;
        let n = (20.0 * fs) as usize;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                // Amplitude collapses in the middle third.
                let amp = if (7.0..13.0).contains(&t) { 1e-12 } else { 1e-6 };
                amp * (2.0 * std::f64::consts::PI * f_z * t).cos()
            })
            .collect();
        let trace = TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter);
        let series = pll_extract_with(
            &trace,
            f_z,
            &PllOptions {
                cutoff: 5.0,
                min_amplitude: 1e-8,
                decimate: None,
            },
        )
        .unwrap();
        let gap_count = series.valid.iter().filter(|v| !**v).count();
        assert!(gap_count > 0, "expected flagged gaps");
        // Gaps concentrate in the collapsed window.
        for (t, v) in series.times.iter().zip(&series.valid) {
            if (8.0..12.0).contains(t) {
                assert!(!v, "sample at t = {t} should be flagged");
            }
        }
    }

    #[test]
    fn drift_fit_recovers_exact_ramp_and_zero() {
        let times: Vec<f64> = (0..600).map(|i| i as f64).collect();
        let rate = 8e-8;
        let freqs: Vec<f64> = times.iter().map(|t| 1280.0 + rate * t).collect();
        let series = FrequencySeries::new(times.clone(), freqs, 1280.0);
        let (r, _) = drift_fit(&series).unwrap();
        assert_relative_eq!(r, rate, max_relative = 1e-10);

        let flat = FrequencySeries::new(times, vec![1280.0; 600], 1280.0);
        let (r0, _) = drift_fit(&flat).unwrap();
        assert!(r0.abs() < 1e-15);
    }

    #[test]
    fn pll_chirp_drift_recovery() {
        // Linear chirp at 8e-8 Hz/s over 600 s.
        let f_z = 1280.0;
        let fs = 8.0 * f_z;
        let rate = 8e-8;
        let n = (600.0 * fs) as usize;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let phase = 2.0 * std::f64::consts::PI * (f_z * t + 0.5 * rate * t * t);
                1e-6 * phase.sin()
            })
            .collect();
        let trace = TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter);
        let series = pll_extract(&trace, f_z, 5.0).unwrap();
        // Trim the settling edges before fitting the drift.
        let n = series.len();
        let trimmed = FrequencySeries::new(
            series.times[n / 10..9 * n / 10].to_vec(),
            series.frequencies[n / 10..9 * n / 10].to_vec(),
            f_z,
        );
        let (r, _) = drift_fit(&trimmed).unwrap();
        assert!(
            (r - rate).abs() < 0.2 * rate,
            "recovered drift {r} not within 20% of {rate}"
        );
    }

    #[test]
    fn psd_white_noise_level() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let fs = 1000.0;
        let sigma = 0.7;
        let n = 200_000;
        let values: Vec<f64> = (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let trace = TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter);
        let p = psd(&trace, 1024).unwrap();
        // One-sided white level 2·v/r.
        let expected = 2.0 * sigma * sigma / fs;
        let level = p.band_mean(50.0, 450.0);
        assert_relative_eq!(level, expected, max_relative = 0.03);
        // Parseval within 5%.
        assert_relative_eq!(
            p.integrated_power(),
            sigma * sigma,
            max_relative = 0.05
        );
    }

    #[test]
    fn psd_tone_peak_power() {
        let fs = 4096.0;
        let amp = 2.5;
        let f0 = 415.3; // deliberately off-bin
        let n = 65536;
        let values: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
            .collect();
        let trace = TimeTrace::new(0.0, 1.0 / fs, values, Unit::Meter);
        let p = psd(&trace, 4096).unwrap();
        let peak_power = p.band_power(f0 - 5.0, f0 + 5.0);
        assert_relative_eq!(peak_power, amp * amp / 2.0, max_relative = 0.02);
    }

    #[test]
    fn psd_rejects_short_traces() {
        let trace = TimeTrace::new(0.0, 1e-3, vec![0.0; 100], Unit::Meter);
        assert!(psd(&trace, 64).is_err());
    }
}
