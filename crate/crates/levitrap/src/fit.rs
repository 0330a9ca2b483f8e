//! Shared fitting machinery: weighted linear least squares and a damped
//! Gauss-Newton (Levenberg-Marquardt) solver for the nonlinear fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named parameter estimate with 1σ uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

/// Outcome of a fit: parameter estimates, covariance, and the residual
/// diagnostics used by the model-misfit check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<Param>,
    /// Row-major p×p covariance of the parameter estimates.
    pub covariance: Vec<f64>,
    /// Residuals in the (normalized) space the fit was performed in,
    /// one per observation.
    pub residuals: Vec<f64>,
    /// Per-point measurement σ in the same space (empty when unweighted).
    pub point_sigmas: Vec<f64>,
    /// Mean squared normalized residual, `Σε²/(n−p)`.
    pub mse: f64,
    /// Mean of the per-point measurement variances, `⟨σ²⟩`.
    pub mean_variance: f64,
    pub iterations: usize,
    /// Set when the data cannot constrain a parameter (e.g. a flat ring-up).
    pub degenerate: bool,
    /// Set when `MSE` exceeds `⟨σ²⟩` by more than an order of magnitude.
    pub excess_noise: bool,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
            .value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter named {name}"))
            .sigma
    }

    /// Fills `mse`, `mean_variance`, and the excess-noise flag from the
    /// stored residuals and point sigmas.
    pub(crate) fn finalize_diagnostics(&mut self, n_params: usize) {
        let n = self.residuals.len();
        if n > n_params {
            self.mse = self.residuals.iter().map(|r| r * r).sum::<f64>() / (n - n_params) as f64;
        }
        if !self.point_sigmas.is_empty() {
            self.mean_variance =
                self.point_sigmas.iter().map(|s| s * s).sum::<f64>() / self.point_sigmas.len() as f64;
            if self.mean_variance > 0.0 {
                self.excess_noise = self.mse > 10.0 * self.mean_variance;
            }
        }
    }
}

/// Straight-line weighted least squares, `y ≈ intercept + slope·x` with
/// weights `w = 1/σ²`. Returns the analytic solution and its covariance
/// scaled by the reduced chi-square (so uncertainties reflect the actual
/// residual scatter, matching common curve-fit defaults).
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_sigma: f64,
    pub intercept_sigma: f64,
    pub covariance: [f64; 4],
    pub residuals: Vec<f64>,
}

pub fn weighted_line_fit(x: &[f64], y: &[f64], weights: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || weights.len() != n {
        return Err(Error::invalid(
            "line fit needs >= 2 points with matching x/y/weight lengths",
        ));
    }
    // Centered normal equations for numerical stability (tiny slopes riding
    // on large offsets would otherwise cancel catastrophically).
    let (mut sw, mut swx, mut swy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sw += weights[i];
        swx += weights[i] * x[i];
        swy += weights[i] * y[i];
    }
    let x_bar = swx / sw;
    let y_bar = swy / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - x_bar;
        sxx += weights[i] * dx * dx;
        sxy += weights[i] * dx * (y[i] - y_bar);
    }
    if sxx <= 0.0 {
        return Err(Error::FitFailure {
            reason: "degenerate abscissa: all x identical".into(),
            iterations: 0,
            last_params: vec![],
        });
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let residuals: Vec<f64> = (0..n)
        .map(|i| (y[i] - y_bar) - slope * (x[i] - x_bar))
        .collect();

    // Unscaled covariance from the centered normal equations.
    let var_slope = 1.0 / sxx;
    let var_intercept = 1.0 / sw + x_bar * x_bar / sxx;
    let cov_si = -x_bar / sxx;
    // Scale by reduced chi-square when it exceeds one.
    let chi2: f64 = (0..n).map(|i| weights[i] * residuals[i] * residuals[i]).sum();
    let scale = if n > 2 { (chi2 / (n - 2) as f64).max(1.0) } else { 1.0 };

    Ok(LineFit {
        slope,
        intercept,
        slope_sigma: (var_slope * scale).sqrt(),
        intercept_sigma: (var_intercept * scale).sqrt(),
        covariance: [
            var_intercept * scale,
            cov_si * scale,
            cov_si * scale,
            var_slope * scale,
        ],
        residuals,
    })
}

/// Options for [`levenberg_marquardt`].
#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost-decrease threshold for convergence.
    pub cost_tolerance: f64,
    /// Parameter step threshold for convergence (relative).
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Scale the covariance by the reduced chi-square.
    pub scale_covariance: bool,
    /// Characteristic magnitude per parameter, used to size the
    /// finite-difference steps. Without it a parameter initialized at zero
    /// gets a degenerate step and a garbage Jacobian column.
    pub param_scales: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            scale_covariance: true,
            param_scales: None,
        }
    }
}

/// Raw solver output; higher-level fits wrap this into a [`FitResult`].
pub struct LmFit {
    pub params: Vec<f64>,
    /// Row-major p×p covariance.
    pub covariance: Vec<f64>,
    pub residuals: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Damped Gauss-Newton minimization of `½‖r(x)‖²`.
///
/// `residual_fn` writes the residual vector for a parameter vector. The
/// Jacobian is evaluated by central finite differences. Steps are accepted
/// only when the cost decreases (monotone descent); the damping factor
/// adapts by factors of ten on acceptance/rejection.
pub fn levenberg_marquardt(
    residual_fn: &dyn Fn(&[f64], &mut [f64]),
    n_residuals: usize,
    x0: &[f64],
    opts: &LmOptions,
) -> Result<LmFit> {
    let p = x0.len();
    if p == 0 || n_residuals < p {
        return Err(Error::invalid(
            "LM requires at least one parameter and n_residuals >= n_params",
        ));
    }
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n_residuals];
    residual_fn(&x, &mut r);
    let mut cost = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    if !cost.is_finite() {
        return Err(Error::FitFailure {
            reason: "non-finite residuals at the initial point".into(),
            iterations: 0,
            last_params: x,
        });
    }

    let scales: Vec<f64> = match &opts.param_scales {
        Some(s) => {
            if s.len() != p {
                return Err(Error::invalid("param_scales length must match x0"));
            }
            s.iter().map(|v| v.abs().max(1e-300)).collect()
        }
        None => x0.iter().map(|v| v.abs().max(1e-9)).collect(),
    };
    let step_of = |x: &[f64], j: usize| 1e-6 * x[j].abs().max(scales[j]);

    let mut lambda = opts.initial_damping;
    let mut jac = DMatrix::<f64>::zeros(n_residuals, p);
    let mut r_plus = vec![0.0; n_residuals];
    let mut r_minus = vec![0.0; n_residuals];
    let mut iterations = 0;
    let mut small_steps = 0;

    for _ in 0..opts.max_iterations {
        iterations += 1;
        // Central-difference Jacobian.
        for j in 0..p {
            let h = step_of(&x, j);
            let mut xp = x.clone();
            xp[j] += h;
            residual_fn(&xp, &mut r_plus);
            xp[j] = x[j] - h;
            residual_fn(&xp, &mut r_minus);
            for i in 0..n_residuals {
                jac[(i, j)] = (r_plus[i] - r_minus[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let gnorm = g.amax();
        if gnorm == 0.0 {
            break;
        }

        let mut stepped = false;
        for _ in 0..32 {
            // Marquardt damping on the diagonal.
            let mut a = jtj.clone();
            for j in 0..p {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut x_new = x.clone();
            for j in 0..p {
                x_new[j] += delta[j];
            }
            residual_fn(&x_new, &mut r_plus);
            let cost_new = 0.5 * r_plus.iter().map(|v| v * v).sum::<f64>();
            if cost_new.is_finite() && cost_new < cost {
                let rel_decrease = (cost - cost_new) / cost.max(1e-300);
                let max_rel_step = (0..p)
                    .map(|j| (delta[j] / x[j].abs().max(1e-12)).abs())
                    .fold(0.0, f64::max);
                x = x_new;
                r.copy_from_slice(&r_plus);
                cost = cost_new;
                lambda = (lambda * 0.1).max(1e-14);
                stepped = true;
                // Converged only after two consecutive undamped steps with
                // negligible progress; a single tiny damped step says
                // nothing about optimality.
                if rel_decrease < opts.cost_tolerance && max_rel_step < opts.step_tolerance.sqrt()
                {
                    small_steps += 1;
                } else {
                    small_steps = 0;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped || small_steps >= 2 {
            break;
        }
    }
    finish(residual_fn, x, r, cost, iterations, opts, &scales)
}

fn finish(
    residual_fn: &dyn Fn(&[f64], &mut [f64]),
    x: Vec<f64>,
    r: Vec<f64>,
    cost: f64,
    iterations: usize,
    opts: &LmOptions,
    scales: &[f64],
) -> Result<LmFit> {
    let p = x.len();
    let n = r.len();
    // Covariance from the final Jacobian.
    let mut jac = DMatrix::<f64>::zeros(n, p);
    let mut r_plus = vec![0.0; n];
    let mut r_minus = vec![0.0; n];
    for j in 0..p {
        let h = 1e-6 * x[j].abs().max(scales[j]);
        let mut xp = x.clone();
        xp[j] += h;
        residual_fn(&xp, &mut r_plus);
        xp[j] = x[j] - h;
        residual_fn(&xp, &mut r_minus);
        for i in 0..n {
            jac[(i, j)] = (r_plus[i] - r_minus[i]) / (2.0 * h);
        }
    }
    let jtj = jac.transpose() * &jac;
    let cov = match jtj.clone().try_inverse() {
        Some(inv) => inv,
        None => {
            // Singular normal equations: report a huge variance rather than
            // aborting; callers flag the fit as degenerate.
            DMatrix::from_diagonal_element(p, p, f64::INFINITY)
        }
    };
    let scale = if opts.scale_covariance && n > p {
        (2.0 * cost / (n - p) as f64).max(f64::MIN_POSITIVE)
    } else {
        1.0
    };
    let covariance: Vec<f64> = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .map(|(i, j)| cov[(i, j)] * scale)
        .collect();
    Ok(LmFit {
        params: x,
        covariance,
        residuals: r,
        cost,
        iterations,
    })
}
