use super::polynomial::{self, C64};
use super::FrequencyResponse;
use crate::error::{Error, Result};

/// Rational SISO transfer function `num(s) / den(s)`, coefficients in
/// descending powers of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TransferFunction {
    /// Builds a proper transfer function. Leading zeros of the numerator are
    /// dropped; the denominator's leading coefficient must be nonzero.
    pub fn new(num: impl Into<Vec<f64>>, den: impl Into<Vec<f64>>) -> Result<Self> {
        let num = num.into();
        let den = den.into();
        if num.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCoefficient("numerator"));
        }
        if den.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCoefficient("denominator"));
        }
        if den.first().map_or(true, |&c| c == 0.0) {
            return Err(Error::DegenerateDenominator);
        }
        let num = polynomial::trim_leading_zeros(&num);
        if num.len() > den.len() {
            return Err(Error::ImproperTransferFunction {
                num_degree: num.len() - 1,
                den_degree: den.len() - 1,
            });
        }
        Ok(Self { num, den })
    }

    pub fn gain(k: f64) -> Result<Self> {
        Self::new(vec![k], vec![1.0])
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    /// Degree of the denominator.
    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.len() < self.den.len() || self.num.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, s: C64) -> C64 {
        polynomial::eval(&self.num, s) / polynomial::eval(&self.den, s)
    }

    /// `num(0) / den(0)`.
    pub fn dc_gain(&self) -> Result<f64> {
        let d = *self.den.last().expect("nonempty denominator");
        if d == 0.0 {
            return Err(Error::PoleOnImaginaryAxis { omega: 0.0 });
        }
        Ok(*self.num.last().expect("nonempty numerator") / d)
    }

    pub fn series(&self, other: &TransferFunction) -> TransferFunction {
        TransferFunction {
            num: polynomial::multiply(&self.num, &other.num),
            den: polynomial::multiply(&self.den, &other.den),
        }
    }

    pub fn poles(&self) -> Vec<C64> {
        polynomial::roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<C64> {
        polynomial::roots(&self.num)
    }

    /// Characteristic polynomial of the negative-feedback loop around
    /// `self * controller`: `den_g * den_c + num_g * num_c`.
    pub fn closed_loop_characteristic(&self, controller: &TransferFunction) -> Vec<f64> {
        polynomial::add(
            &polynomial::multiply(&self.den, &controller.den),
            &polynomial::multiply(&self.num, &controller.num),
        )
    }

    /// Reflects right-half-plane poles into the left half-plane.
    ///
    /// The magnitude response and the DC gain are unchanged; only the phase
    /// moves. Used to make fitted models with spurious unstable poles
    /// simulable.
    pub fn with_mirrored_poles(&self) -> Result<TransferFunction> {
        let poles = self.poles();
        if poles.iter().all(|p| p.re <= 0.0) {
            return Ok(self.clone());
        }
        let mirrored: Vec<C64> = poles
            .iter()
            .map(|p| if p.re > 0.0 { C64::new(-p.re, p.im) } else { *p })
            .collect();
        let mut den = polynomial::from_roots(self.den[0], &mirrored);
        // The constant term is invariant under reflection of conjugate pairs
        // and real roots flip its sign only for an odd count of real roots;
        // keep the printed constant exactly when the sign agrees.
        let last = den.len() - 1;
        if den[last].signum() == self.den[last].signum()
            && (den[last] - self.den[last]).abs() <= 1e-9 * self.den[last].abs()
        {
            den[last] = self.den[last];
        }
        TransferFunction::new(self.num.clone(), den)
    }
}

impl FrequencyResponse for TransferFunction {
    fn freq_response(&self, omega: f64) -> Result<C64> {
        let s = C64::new(0.0, omega);
        let d = polynomial::eval(&self.den, s);
        if d.norm() == 0.0 {
            return Err(Error::PoleOnImaginaryAxis { omega });
        }
        Ok(polynomial::eval(&self.num, s) / d)
    }
}
