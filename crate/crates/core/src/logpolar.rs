use num_complex::Complex64;
use std::f64::consts::PI;

/// A complex number stored as `exp(log_modulus) * exp(i * phase)`.
///
/// Products of many factors `1 + z/s` grow like `n^Re(z)`; accumulating
/// logarithms keeps them exact to rounding with no overflow. Zero is a
/// flag, since it has no logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPolarComplex {
    log_modulus: f64,
    phase: f64,
    zero: bool,
}

/// Reduces an angle to (-pi, pi].
pub fn wrap_phase(p: f64) -> f64 {
    let mut q = p - (p / (2.0 * PI)).round() * (2.0 * PI);
    if q <= -PI {
        q += 2.0 * PI;
    } else if q > PI {
        q -= 2.0 * PI;
    }
    q
}

impl LogPolarComplex {
    pub const ONE: LogPolarComplex = LogPolarComplex {
        log_modulus: 0.0,
        phase: 0.0,
        zero: false,
    };

    pub const ZERO: LogPolarComplex = LogPolarComplex {
        log_modulus: f64::NEG_INFINITY,
        phase: 0.0,
        zero: true,
    };

    pub fn new(log_modulus: f64, phase: f64) -> Self {
        LogPolarComplex {
            log_modulus,
            phase: wrap_phase(phase),
            zero: false,
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        if z.re == 0.0 && z.im == 0.0 {
            return Self::ZERO;
        }
        Self::new(z.norm().ln(), z.arg())
    }

    /// `1 + z/s`, with the modulus taken through `ln_1p` for accuracy at large s.
    pub fn one_plus_over(z: Complex64, s: f64) -> Self {
        let re = z.re / s;
        let im = z.im / s;
        if re == -1.0 && im == 0.0 {
            return Self::ZERO;
        }
        let log_modulus = 0.5 * (2.0 * re + re * re + im * im).ln_1p();
        Self::new(log_modulus, im.atan2(1.0 + re))
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn log_modulus(&self) -> f64 {
        self.log_modulus
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn modulus(&self) -> f64 {
        if self.zero {
            0.0
        } else {
            self.log_modulus.exp()
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        if self.zero {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(self.log_modulus.exp(), self.phase)
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.zero || other.zero {
            return Self::ZERO;
        }
        Self::new(self.log_modulus + other.log_modulus, self.phase + other.phase)
    }

    /// Reciprocal; `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        if self.zero {
            None
        } else {
            Some(Self::new(-self.log_modulus, -self.phase))
        }
    }

    /// Quotient; `None` when dividing by zero.
    pub fn div(&self, other: &Self) -> Option<Self> {
        other.inv().map(|r| self.mul(&r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrapping_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn zero_flag_propagates() {
        let z = LogPolarComplex::one_plus_over(Complex64::new(-2.0, 0.0), 2.0);
        assert!(z.is_zero());
        let p = z.mul(&LogPolarComplex::from_complex(Complex64::new(3.0, 1.0)));
        assert!(p.is_zero());
        assert_eq!(p.to_complex(), Complex64::new(0.0, 0.0));
        assert!(z.inv().is_none());
    }

    proptest! {
        #[test]
        fn product_matches_cartesian(ar in -5.0..5.0f64, ai in -5.0..5.0f64, br in -5.0..5.0f64, bi in -5.0..5.0f64) {
            let a = Complex64::new(ar, ai);
            let b = Complex64::new(br, bi);
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let lp = LogPolarComplex::from_complex(a).mul(&LogPolarComplex::from_complex(b));
            prop_assert!((lp.to_complex() - a * b).norm() <= 1e-12 * (a * b).norm());
            let q = LogPolarComplex::from_complex(a).div(&LogPolarComplex::from_complex(b)).unwrap();
            prop_assert!((q.to_complex() - a / b).norm() <= 1e-12 * (a / b).norm());
            prop_assert!(lp.phase() > -PI && lp.phase() <= PI);
        }
    }
}
