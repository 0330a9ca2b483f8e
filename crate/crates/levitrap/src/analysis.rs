//! Parameter estimators: ring-down and ring-up damping fits, the linearized
//! heating-rate fit, the total-least-squares γ–P regression, and the
//! residual/MSE misfit diagnostic.

use crate::constants::{BOLTZMANN, HBAR};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, weighted_line_fit, FitResult, LmOptions, Param};
use crate::physics::Uncertain;
use crate::trace::{TimeTrace, Unit};

/// Ring-down fit: weighted linear least squares on `ln(z²)` versus time.
///
/// The decay `⟨z(t)²⟩ = ⟨z(0)²⟩·e^{−γt}` becomes a straight line in log
/// space; each point carries variance `σ_i² = (2·Δa/a_i)²` from the
/// amplitude measurement uncertainty `Δa` (unit weights when `Δa = 0`).
/// Returns `gamma` (rad/s) and `z0_squared` (m²).
pub fn ringdown_fit(
    times: &[f64],
    squared_amplitudes: &[f64],
    amp_uncertainty: f64,
) -> Result<FitResult> {
    let n = times.len();
    if n < 3 || squared_amplitudes.len() != n {
        return Err(Error::invalid(
            "ring-down fit needs >= 3 matching (t, z²) points",
        ));
    }
    if let Some(bad) = squared_amplitudes.iter().find(|&&a| !(a > 0.0)) {
        return Err(Error::invalid(format!(
            "squared amplitudes must be > 0 for the log-space fit, got {bad}"
        )));
    }
    if amp_uncertainty < 0.0 {
        return Err(Error::invalid("amplitude uncertainty must be >= 0"));
    }

    let y: Vec<f64> = squared_amplitudes.iter().map(|a| a.ln()).collect();
    let sigmas: Vec<f64> = squared_amplitudes
        .iter()
        .map(|&a2| 2.0 * amp_uncertainty / a2.sqrt())
        .collect();
    let weights: Vec<f64> = if amp_uncertainty == 0.0 {
        vec![1.0; n]
    } else {
        sigmas.iter().map(|s| 1.0 / (s * s)).collect()
    };
    let line = weighted_line_fit(times, &y, &weights)?;

    let gamma = -line.slope;
    let z0_squared = line.intercept.exp();
    let mut result = FitResult {
        params: vec![
            Param {
                name: "gamma".into(),
                value: gamma,
                sigma: line.slope_sigma,
            },
            Param {
                name: "z0_squared".into(),
                value: z0_squared,
                sigma: z0_squared * line.intercept_sigma,
            },
        ],
        covariance: line.covariance.to_vec(),
        residuals: line.residuals,
        point_sigmas: if amp_uncertainty == 0.0 { vec![] } else { sigmas },
        mse: 0.0,
        mean_variance: 0.0,
        iterations: 1,
        degenerate: false,
        excess_noise: false,
    };
    result.finalize_diagnostics(2);
    Ok(result)
}

/// Ring-up fit: single-parameter nonlinear fit of
/// `⟨E(t)⟩ = k_B·T_0 + k_B·(T_fb − T_0)·e^{−γ·(t − t_fb)}` with `T_fb`
/// held fixed. The energy trace must be in units of `k_B·T_0`; only lit
/// samples at `t ≥ t_fb` enter the fit. Returns `gamma` (rad/s).
pub fn ringup_fit(
    energy: &TimeTrace,
    t_fb: f64,
    t_fb_temperature: f64,
    t0_temperature: f64,
) -> Result<FitResult> {
    if energy.unit != Unit::KbT0 {
        return Err(Error::invalid("ring-up fit expects energy in k_B·T_0 units"));
    }
    if !(t_fb_temperature < t0_temperature) {
        return Err(Error::invalid(format!(
            "ring-up requires T_fb ({t_fb_temperature}) < T_0 ({t0_temperature})"
        )));
    }
    let contrast = t_fb_temperature / t0_temperature - 1.0;
    let pts: Vec<(f64, f64)> = energy
        .lit_samples()
        .filter(|(t, _)| *t >= t_fb)
        .map(|(t, e)| (t - t_fb, e))
        .collect();
    if pts.len() < 3 {
        return Err(Error::invalid("ring-up fit needs >= 3 samples after t_fb"));
    }

    let span = pts.last().unwrap().0.max(f64::MIN_POSITIVE);
    let residual = |p: &[f64], r: &mut [f64]| {
        let gamma = p[0].abs();
        for (i, (t, e)) in pts.iter().enumerate() {
            r[i] = 1.0 + contrast * (-gamma * t).exp() - e;
        }
    };
    let lm = levenberg_marquardt(&residual, pts.len(), &[2.0 / span], &LmOptions::default())
        .map_err(|e| match e {
            Error::FitFailure { reason, iterations, last_params } => Error::FitFailure {
                reason: format!("ring-up fit did not converge: {reason}"),
                iterations,
                last_params,
            },
            other => other,
        })?;

    let gamma = lm.params[0].abs();
    let sigma = lm.covariance[0].sqrt();
    let mut result = FitResult {
        params: vec![Param {
            name: "gamma".into(),
            value: gamma,
            sigma,
        }],
        covariance: lm.covariance,
        residuals: lm.residuals,
        point_sigmas: vec![],
        mse: 0.0,
        mean_variance: 0.0,
        iterations: lm.iterations,
        degenerate: !sigma.is_finite() || sigma > gamma.max(f64::MIN_POSITIVE) * 10.0,
        excess_noise: false,
    };
    result.finalize_diagnostics(1);
    Ok(result)
}

/// Linearized heating fit: `⟨E(t)⟩ = k_B·T_fb + s·(t − t_fb)` with the
/// intercept fixed at `T_fb` and only the slope free; valid for
/// `duration ≪ 1/γ`. The slope in `k_B·T_0`/s converts to a phonon rate
/// `Γ = s·k_B·T_0/(ħ·Ω_z)`. Returns `phonon_rate` (1/s) and the raw
/// `slope` (k_B·T_0 per second).
pub fn heating_fit(
    energy: &TimeTrace,
    t_fb: f64,
    t_fb_temperature: f64,
    t0_temperature: f64,
    omega_z: f64,
) -> Result<FitResult> {
    if energy.unit != Unit::KbT0 {
        return Err(Error::invalid("heating fit expects energy in k_B·T_0 units"));
    }
    let intercept = t_fb_temperature / t0_temperature;
    let pts: Vec<(f64, f64)> = energy
        .lit_samples()
        .filter(|(t, _)| *t >= t_fb)
        .map(|(t, e)| (t - t_fb, e - intercept))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid("heating fit needs >= 2 samples after t_fb"));
    }
    let sxx: f64 = pts.iter().map(|(t, _)| t * t).sum();
    if sxx == 0.0 {
        return Err(Error::FitFailure {
            reason: "heating fit has no time leverage".into(),
            iterations: 0,
            last_params: vec![],
        });
    }
    let sxy: f64 = pts.iter().map(|(t, e)| t * e).sum();
    let slope = sxy / sxx;
    let residuals: Vec<f64> = pts.iter().map(|(t, e)| e - slope * t).collect();
    let n = pts.len();
    let dof = (n - 1).max(1);
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64;
    let slope_sigma = (s2 / sxx).sqrt();

    let to_phonons = BOLTZMANN * t0_temperature / (HBAR * omega_z);
    let mut result = FitResult {
        params: vec![
            Param {
                name: "phonon_rate".into(),
                value: slope * to_phonons,
                sigma: slope_sigma * to_phonons,
            },
            Param {
                name: "slope".into(),
                value: slope,
                sigma: slope_sigma,
            },
        ],
        covariance: vec![slope_sigma * slope_sigma],
        residuals,
        point_sigmas: vec![],
        mse: 0.0,
        mean_variance: 0.0,
        iterations: 1,
        degenerate: false,
        excess_noise: false,
    };
    result.finalize_diagnostics(1);
    Ok(result)
}

/// Total-least-squares fit of `γ/(2π) = a·P` in log space with the slope
/// fixed to one, i.e. an errors-in-variables estimate of the single offset
/// `ln a`. Each point's orthogonal deviation is weighted by the combined
/// relative variance of both coordinates, so the result is symmetric under
/// exchanging which variable plays the role of x. Returns
/// `a_hz_per_mbar`.
pub fn tls_pressure_fit(gammas: &[Uncertain], pressures: &[Uncertain]) -> Result<FitResult> {
    let n = gammas.len();
    if n < 2 || pressures.len() != n {
        return Err(Error::invalid(
            "TLS fit needs >= 2 matching (gamma, pressure) points",
        ));
    }
    for g in gammas.iter().chain(pressures) {
        if !(g.value > 0.0) {
            return Err(Error::invalid(format!(
                "TLS fit requires positive values, got {}",
                g.value
            )));
        }
        if g.sigma < 0.0 {
            return Err(Error::invalid("TLS sigmas must be >= 0"));
        }
    }

    // d_i = ln(γ_i / 2π) − ln(P_i); weights from combined relative variances.
    let d: Vec<f64> = gammas
        .iter()
        .zip(pressures)
        .map(|(g, p)| (g.value / (2.0 * std::f64::consts::PI)).ln() - p.value.ln())
        .collect();
    let denoms: Vec<f64> = gammas
        .iter()
        .zip(pressures)
        .map(|(g, p)| {
            let rg = g.relative_sigma();
            let rp = p.relative_sigma();
            rg * rg + rp * rp
        })
        .collect();
    let floor = denoms
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-12 } else { 1.0 };
    let weights: Vec<f64> = denoms.iter().map(|&v| 1.0 / v.max(floor)).collect();

    let sw: f64 = weights.iter().sum();
    let c = weights.iter().zip(&d).map(|(w, d)| w * d).sum::<f64>() / sw;
    let residuals: Vec<f64> = d.iter().map(|di| di - c).collect();
    let chi2: f64 = weights
        .iter()
        .zip(&residuals)
        .map(|(w, r)| w * r * r)
        .sum();
    let scale = if n > 1 {
        (chi2 / (n - 1) as f64).max(1.0).sqrt()
    } else {
        1.0
    };
    let sigma_c = scale / sw.sqrt();
    let a = c.exp();

    let mut result = FitResult {
        params: vec![Param {
            name: "a_hz_per_mbar".into(),
            value: a,
            sigma: a * sigma_c,
        }],
        covariance: vec![sigma_c * sigma_c],
        residuals,
        point_sigmas: denoms.iter().map(|v| v.sqrt()).collect(),
        mse: 0.0,
        mean_variance: 0.0,
        iterations: 1,
        degenerate: false,
        excess_noise: false,
    };
    result.finalize_diagnostics(1);
    Ok(result)
}

/// Recomputes the misfit diagnostic from stored residuals: the mean squared
/// normalized residual `MSE = Σε²/(n − p)` and the mean measurement
/// variance `⟨σ²⟩`. An MSE more than an order of magnitude above `⟨σ²⟩`
/// indicates the model does not capture the dynamics.
pub fn residual_mse(fit: &FitResult, n_params: usize) -> Result<(f64, f64)> {
    let n = fit.residuals.len();
    if n <= n_params {
        return Err(Error::invalid(format!(
            "MSE needs more observations ({n}) than parameters ({n_params})"
        )));
    }
    let mse = fit.residuals.iter().map(|r| r * r).sum::<f64>() / (n - n_params) as f64;
    if fit.point_sigmas.is_empty() {
        return Err(Error::invalid(
            "MSE comparison requires per-point measurement sigmas",
        ));
    }
    let mean_var =
        fit.point_sigmas.iter().map(|s| s * s).sum::<f64>() / fit.point_sigmas.len() as f64;
    Ok((mse, mean_var))
}
