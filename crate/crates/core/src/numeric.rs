//! Log-domain summation of complex exponentials.
//!
//! Every probability, norm and overlap in the crate is a sum `Σ e^{c_j}` over
//! complex exponents. [`ExpSum`] accumulates such a sum relative to a shift
//! (the largest real part) with Neumaier compensation, and tracks the sum of
//! magnitudes so the cancellation can be measured. The magnitude ratio
//! `Σ|e^c| / |Σ e^c|` is the condition number used by the stability policy.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest tolerated condition number of an exponential sum.
///
/// With double precision the relative error of the result is roughly
/// `κ · 2.2e-16`, so this keeps about four significant digits. Heralding
/// probabilities near `1e-6` at high photon numbers routinely reach `κ ~ 1e10`
/// because they are small differences of order-one terms.
pub const MAX_CONDITION: f64 = 1e12;

/// Compensated scalar accumulator (Neumaier's variant of Kahan summation).
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Deterministic compensated sum of a slice.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// A shifted sum of exponentials, `Σ m_j e^{c_j} = e^{shift} · (re + i im)`.
#[derive(Debug, Clone, Copy)]
pub struct ExpSum {
    pub shift: f64,
    pub sum: Complex64,
    /// `Σ |m_j e^{c_j - shift}|`, the cancellation-free scale.
    pub magnitude: f64,
}

impl ExpSum {
    /// Sum `mult_j · e^{c_j}`. Terms with `Re c = -∞` are skipped.
    ///
    /// The iteration order is the summation order, so callers that need
    /// reproducible results must pass a deterministic sequence.
    pub fn new<I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Complex64, f64)>,
        I::IntoIter: Clone,
    {
        let iter = terms.into_iter();
        let shift = iter
            .clone()
            .filter(|(_, m)| *m != 0.0)
            .map(|(c, _)| c.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Err(Error::DegenerateState("all weights vanish".into()));
        }
        if !shift.is_finite() {
            return Err(Error::NumericalStability(format!(
                "non-finite log-weight (max real part {shift})"
            )));
        }
        let (mut re, mut im, mut mag) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
        for (c, m) in iter {
            if m == 0.0 || c.re == f64::NEG_INFINITY {
                continue;
            }
            let z = (c - shift).exp() * m;
            re.add(z.re);
            im.add(z.im);
            mag.add(z.norm());
        }
        Ok(Self {
            shift,
            sum: Complex64::new(re.value(), im.value()),
            magnitude: mag.value(),
        })
    }

    /// Complex logarithm of the sum.
    pub fn ln(&self) -> Complex64 {
        self.sum.ln() + self.shift
    }

    /// `|Σ| / Σ|·|` inverted: how much the result was amplified by cancellation.
    pub fn condition(&self) -> f64 {
        self.magnitude / self.sum.norm()
    }

    /// Condition number of the real part alone.
    pub fn condition_re(&self) -> f64 {
        self.magnitude / self.sum.re.abs()
    }

    /// Natural log of the real part, which must be a positive quantity such
    /// as a norm or probability.
    ///
    /// A negative real part below `1e-12` of the magnitude scale is treated as
    /// rounding noise and clamped to zero (returned as `-∞`); larger negative
    /// values, and sums whose cancellation exceeds [`MAX_CONDITION`], raise a
    /// stability error.
    pub fn ln_re_positive(&self, what: &str) -> Result<f64> {
        let re = self.sum.re;
        if re <= 0.0 {
            if -re <= 1e-12 * self.magnitude {
                log::warn!("{what}: real part {re:e} within rounding of zero, clamped");
                return Ok(f64::NEG_INFINITY);
            }
            return Err(Error::NumericalStability(format!(
                "{what} is negative ({:e} relative to scale)",
                re / self.magnitude
            )));
        }
        let kappa = self.condition_re();
        if kappa > MAX_CONDITION {
            return Err(Error::NumericalStability(format!(
                "{what} lost to cancellation (condition number {kappa:.3e})"
            )));
        }
        Ok(re.ln() + self.shift)
    }
}

/// Reduce the imaginary part of a log-weight to (-π, π].
pub fn wrap_phase(c: Complex64) -> Complex64 {
    use std::f64::consts::PI;
    if c.im > -PI && c.im <= PI {
        return c;
    }
    let mut im = c.im.rem_euclid(2.0 * PI);
    if im > PI {
        im -= 2.0 * PI;
    }
    Complex64::new(c.re, im)
}

/// Complex log of a coefficient, with `ln 0 = -∞`.
pub fn ln_complex(z: Complex64) -> Complex64 {
    if z == Complex64::new(0.0, 0.0) {
        Complex64::new(f64::NEG_INFINITY, 0.0)
    } else {
        z.ln()
    }
}

/// `ln n!` by summation for small n and Stirling series beyond.
pub fn ln_factorial(n: usize) -> f64 {
    if n < 170 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        let x = n as f64 + 1.0;
        // Stirling series for ln Γ(x)
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
    }
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_phase_range() {
        let c = wrap_phase(Complex64::new(1.0, 7.0));
        assert!((c.im - (7.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert_eq!(wrap_phase(Complex64::new(0.0, std::f64::consts::PI)).im, std::f64::consts::PI);
    }

    #[test]
    fn quarter_weights_sum_to_one() {
        let w = (0.25f64).ln();
        let s = ExpSum::new((0..4).map(|_| (Complex64::new(w, 0.0), 1.0))).unwrap();
        assert!(s.ln().norm() < 1e-15);
    }

    #[test]
    fn negative_sum_raises() {
        let s = ExpSum::new([(Complex64::new(0.0, 0.0), 1.0), (Complex64::new(0.1, 0.0), -1.0)]).unwrap();
        assert!(matches!(s.ln_re_positive("p"), Err(Error::NumericalStability(_))));
    }

    #[test]
    fn ln_factorial_matches_product() {
        assert!((ln_factorial(10) - 3628800f64.ln()).abs() < 1e-12);
        let direct: f64 = (2..=200).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(200) - direct).abs() < 1e-9);
    }
}
