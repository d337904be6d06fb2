/// SISO controllable canonical form held as coefficient vectors.
///
/// Same realization as [`super::realize`], without the dense matrices, so
/// that time-varying models can be re-coefficiented every step without
/// allocating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Companion {
    /// Normalised denominator in ascending order, `a_n .. a_1`, so that
    /// `a[j]` weights `x_j` in the last state equation.
    a: Vec<f64>,
    /// Output row, `c[j]` weights `x_j`.
    c: Vec<f64>,
    d: f64,
}

impl Companion {
    /// `num` must not exceed `den` in length; `den[0] != 0`.
    pub fn new(num: &[f64], den: &[f64]) -> Self {
        let mut out = Self::default();
        out.set(num, den);
        out
    }

    pub fn set(&mut self, num: &[f64], den: &[f64]) {
        debug_assert!(num.len() <= den.len() && den[0] != 0.0);
        let n = den.len() - 1;
        let lead = den[0];
        let pad = n + 1 - num.len();
        let bn = |k: usize| if k < pad { 0.0 } else { num[k - pad] / lead };
        self.a.resize(n, 0.0);
        self.c.resize(n, 0.0);
        self.d = bn(0);
        for k in 1..=n {
            let ak = den[k] / lead;
            self.a[n - k] = ak;
            self.c[n - k] = bn(k) - ak * self.d;
        }
    }

    /// Weights of the states in the last state equation, `dx_n = u - a . x`.
    pub fn state_weights(&self) -> &[f64] {
        &self.a
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.c
    }

    pub fn feedthrough(&self) -> f64 {
        self.d
    }

    pub fn order(&self) -> usize {
        self.a.len()
    }

    pub fn output(&self, x: &[f64], u: f64) -> f64 {
        let mut y = self.d * u;
        for (cj, xj) in self.c.iter().zip(x) {
            y += cj * xj;
        }
        y
    }

    pub fn derivative(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let n = self.a.len();
        if n == 0 {
            return;
        }
        let x = &x[..n];
        dx[..n - 1].copy_from_slice(&x[1..]);
        let mut acc = 0.0;
        for (aj, xj) in self.a.iter().zip(x) {
            acc += aj * xj;
        }
        dx[n - 1] = u - acc;
    }
}
