//! Uniformly sampled time series with a unit tag and optional illumination
//! mask. The mask marks which samples were recorded while the particle was
//! illuminated; dark samples must never feed an estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit tag carried by a [`TimeTrace`]; doubles as the CSV column label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    /// Position, metres.
    Meter,
    /// Squared amplitude, m².
    MeterSquared,
    /// Detector voltage, V.
    Volt,
    /// Signal variance, V².
    VoltSquared,
    /// Energy, joules.
    Joule,
    /// Energy normalized to k_B·T_0.
    KbT0,
    /// Frequency, Hz.
    Hertz,
    Dimensionless,
}

impl Unit {
    /// Column label used by the CSV trace schema (`t_s,<label>`).
    pub fn column_label(self) -> &'static str {
        match self {
            Unit::Meter => "z_m",
            Unit::MeterSquared => "a2_m2",
            Unit::Volt => "u_v",
            Unit::VoltSquared => "var_v2",
            Unit::Joule => "e_j",
            Unit::KbT0 => "e_kbt0",
            Unit::Hertz => "f_hz",
            Unit::Dimensionless => "value",
        }
    }

    pub fn from_column_label(label: &str) -> Option<Unit> {
        Some(match label {
            "z_m" => Unit::Meter,
            "a2_m2" => Unit::MeterSquared,
            "u_v" => Unit::Volt,
            "var_v2" => Unit::VoltSquared,
            "e_j" => Unit::Joule,
            "e_kbt0" => Unit::KbT0,
            "f_hz" => Unit::Hertz,
            "value" => Unit::Dimensionless,
            _ => return None,
        })
    }
}

/// Uniformly sampled scalar series: sample `i` is at `t0 + i·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
    pub unit: Unit,
    /// `Some(mask)` for stroboscopic data; `mask[i] == false` means dark.
    pub lit: Option<Vec<bool>>,
}

impl TimeTrace {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>, unit: Unit) -> Self {
        TimeTrace {
            t0,
            dt,
            values,
            unit,
            lit: None,
        }
    }

    pub fn with_mask(mut self, lit: Vec<bool>) -> Self {
        assert_eq!(lit.len(), self.values.len());
        self.lit = Some(lit);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn is_lit(&self, i: usize) -> bool {
        self.lit.as_ref().map_or(true, |m| m[i])
    }

    /// Iterator over `(t, value)` pairs of lit samples only.
    pub fn lit_samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_lit(*i))
            .map(|(i, &v)| (self.time(i), v))
    }

    pub fn lit_count(&self) -> usize {
        match &self.lit {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.len(),
        }
    }

    /// Mean of lit samples.
    pub fn mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (_, v) in self.lit_samples() {
            sum += v;
            n += 1;
        }
        sum / n as f64
    }

    /// Population variance of lit samples about zero is *not* what this
    /// returns; this is the variance about the mean.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let mut sum = 0.0;
        let mut n = 0usize;
        for (_, v) in self.lit_samples() {
            sum += (v - mean) * (v - mean);
            n += 1;
        }
        sum / n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(Error::invalid(format!("trace dt must be > 0, got {}", self.dt)));
        }
        if let Some(m) = &self.lit {
            if m.len() != self.values.len() {
                return Err(Error::invalid("illumination mask length mismatch"));
            }
        }
        Ok(())
    }
}
