//! Lightweight dimensional tagging for physical quantities.
//!
//! Quantities carry an SI dimension vector (m, kg, s, A, K) alongside their
//! value. Multiplication and division compose dimensions; addition and
//! subtraction panic on a mismatch. The noise-conversion formulas are
//! assembled from tagged quantities so that a wrong unit shows up as an
//! immediate dimension error instead of a silently wrong number.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// SI dimension exponents (metre, kilogram, second, ampere, kelvin).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dim {
    pub m: i8,
    pub kg: i8,
    pub s: i8,
    pub a: i8,
    pub k: i8,
}

impl Dim {
    pub const fn new(m: i8, kg: i8, s: i8, a: i8, k: i8) -> Self {
        Dim { m, kg, s, a, k }
    }

    pub const NONE: Dim = Dim::new(0, 0, 0, 0, 0);
    pub const METER: Dim = Dim::new(1, 0, 0, 0, 0);
    pub const KILOGRAM: Dim = Dim::new(0, 1, 0, 0, 0);
    pub const SECOND: Dim = Dim::new(0, 0, 1, 0, 0);
    pub const KELVIN: Dim = Dim::new(0, 0, 0, 0, 1);
    pub const HERTZ: Dim = Dim::new(0, 0, -1, 0, 0);
    pub const METERS_PER_SECOND: Dim = Dim::new(1, 0, -1, 0, 0);
    pub const NEWTON: Dim = Dim::new(1, 1, -2, 0, 0);
    pub const JOULE: Dim = Dim::new(2, 1, -2, 0, 0);
    pub const JOULE_SECOND: Dim = Dim::new(2, 1, -1, 0, 0);
    pub const COULOMB: Dim = Dim::new(0, 0, 1, 1, 0);
    pub const VOLT: Dim = Dim::new(2, 1, -3, -1, 0);
    pub const VOLT_PER_METER: Dim = Dim::new(1, 1, -3, -1, 0);
    pub const PASCAL: Dim = Dim::new(-1, 1, -2, 0, 0);
    pub const OHM_METER: Dim = Dim::new(3, 1, -3, -2, 0);
    /// One-sided force noise density, N²/Hz.
    pub const FORCE_NOISE: Dim = Dim::new(2, 2, -3, 0, 0);
    /// One-sided electric-field noise density, (V/m)²/Hz.
    pub const EFIELD_NOISE: Dim = Dim::new(2, 2, -5, -2, 0);
    /// Voltage noise amplitude density, V/√Hz. Tracked as V²·s to stay in
    /// integer exponents; `voltage_noise_value` takes the square root last.
    pub const VOLTAGE_NOISE_SQUARED: Dim = Dim::new(4, 2, -5, -2, 0);
    /// One-sided displacement noise density, m²/Hz.
    pub const DISPLACEMENT_NOISE: Dim = Dim::new(2, 0, 1, 0, 0);

    pub const fn mul(self, o: Dim) -> Dim {
        Dim::new(
            self.m + o.m,
            self.kg + o.kg,
            self.s + o.s,
            self.a + o.a,
            self.k + o.k,
        )
    }

    pub const fn div(self, o: Dim) -> Dim {
        Dim::new(
            self.m - o.m,
            self.kg - o.kg,
            self.s - o.s,
            self.a - o.a,
            self.k - o.k,
        )
    }

    pub const fn pow(self, n: i8) -> Dim {
        Dim::new(self.m * n, self.kg * n, self.s * n, self.a * n, self.k * n)
    }

    pub fn is_none(self) -> bool {
        self == Dim::NONE
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (sym, e) in [
            ("m", self.m),
            ("kg", self.kg),
            ("s", self.s),
            ("A", self.a),
            ("K", self.k),
        ] {
            if e != 0 {
                if !first {
                    write!(f, "·")?;
                }
                first = false;
                if e == 1 {
                    write!(f, "{sym}")?;
                } else {
                    write!(f, "{sym}^{e}")?;
                }
            }
        }
        if first {
            write!(f, "1")?;
        }
        Ok(())
    }
}

/// A value with an attached SI dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub dim: Dim,
}

impl Quantity {
    pub const fn new(value: f64, dim: Dim) -> Self {
        Quantity { value, dim }
    }

    pub const fn scalar(value: f64) -> Self {
        Quantity::new(value, Dim::NONE)
    }

    /// Asserts the dimension and unwraps the bare value.
    ///
    /// Panics on mismatch; dimensions are static properties of the formulas,
    /// so a mismatch is a programming error, not a data error.
    #[track_caller]
    pub fn expect_dim(self, dim: Dim) -> f64 {
        assert!(
            self.dim == dim,
            "unit mismatch: expected {dim}, got {}",
            self.dim
        );
        self.value
    }

    pub fn powi(self, n: i8) -> Quantity {
        Quantity::new(self.value.powi(n as i32), self.dim.pow(n))
    }

    /// Square root; all dimension exponents must be even.
    #[track_caller]
    pub fn sqrt(self) -> Quantity {
        let d = self.dim;
        assert!(
            d.m % 2 == 0 && d.kg % 2 == 0 && d.s % 2 == 0 && d.a % 2 == 0 && d.k % 2 == 0,
            "cannot take sqrt of quantity with odd dimension {d}"
        );
        Quantity::new(
            self.value.sqrt(),
            Dim::new(d.m / 2, d.kg / 2, d.s / 2, d.a / 2, d.k / 2),
        )
    }

    pub fn recip(self) -> Quantity {
        Quantity::new(1.0 / self.value, Dim::NONE.div(self.dim))
    }
}

impl Mul for Quantity {
    type Output = Quantity;
    fn mul(self, o: Quantity) -> Quantity {
        Quantity::new(self.value * o.value, self.dim.mul(o.dim))
    }
}

impl Mul<f64> for Quantity {
    type Output = Quantity;
    fn mul(self, o: f64) -> Quantity {
        Quantity::new(self.value * o, self.dim)
    }
}

impl Mul<Quantity> for f64 {
    type Output = Quantity;
    fn mul(self, o: Quantity) -> Quantity {
        Quantity::new(self * o.value, o.dim)
    }
}

impl Div for Quantity {
    type Output = Quantity;
    fn div(self, o: Quantity) -> Quantity {
        Quantity::new(self.value / o.value, self.dim.div(o.dim))
    }
}

impl Div<f64> for Quantity {
    type Output = Quantity;
    fn div(self, o: f64) -> Quantity {
        Quantity::new(self.value / o, self.dim)
    }
}

impl Add for Quantity {
    type Output = Quantity;
    #[track_caller]
    fn add(self, o: Quantity) -> Quantity {
        assert!(
            self.dim == o.dim,
            "unit mismatch in addition: {} + {}",
            self.dim,
            o.dim
        );
        Quantity::new(self.value + o.value, self.dim)
    }
}

impl Sub for Quantity {
    type Output = Quantity;
    #[track_caller]
    fn sub(self, o: Quantity) -> Quantity {
        assert!(
            self.dim == o.dim,
            "unit mismatch in subtraction: {} - {}",
            self.dim,
            o.dim
        );
        Quantity::new(self.value - o.value, self.dim)
    }
}

impl Neg for Quantity {
    type Output = Quantity;
    fn neg(self) -> Quantity {
        Quantity::new(-self.value, self.dim)
    }
}

/// Boltzmann constant as a tagged quantity (J/K).
pub fn boltzmann() -> Quantity {
    Quantity::new(crate::constants::BOLTZMANN, Dim::JOULE.div(Dim::KELVIN))
}

/// Reduced Planck constant as a tagged quantity (J·s).
pub fn hbar() -> Quantity {
    Quantity::new(crate::constants::HBAR, Dim::JOULE_SECOND)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composes_dimensions() {
        let f = Quantity::new(2.0, Dim::NEWTON);
        let d = Quantity::new(4.0, Dim::METER);
        let e = f * d;
        assert_eq!(e.dim, Dim::JOULE);
        assert_eq!(e.value, 8.0);
        assert_eq!((e / d).dim, Dim::NEWTON);
    }

    #[test]
    fn sqrt_halves_even_exponents() {
        let q = Quantity::new(9.0, Dim::METER.pow(2));
        let r = q.sqrt();
        assert_eq!(r.dim, Dim::METER);
        assert_eq!(r.value, 3.0);
    }

    #[test]
    #[should_panic(expected = "unit mismatch")]
    fn addition_rejects_mismatched_dims() {
        let _ = Quantity::new(1.0, Dim::METER) + Quantity::new(1.0, Dim::SECOND);
    }

    #[test]
    #[should_panic(expected = "sqrt")]
    fn sqrt_rejects_odd_exponents() {
        let _ = Quantity::new(1.0, Dim::METER).sqrt();
    }
}
