use nalgebra::{DMatrix, DVector};

use super::polynomial::C64;
use super::rk4::Rk4Workspace;
use super::transfer_function::TransferFunction;
use super::FrequencyResponse;
use crate::error::{Error, Result};

/// Continuous-time model `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = d.ncols();
        let p = d.nrows();
        if b.nrows() != n || b.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{}, expected {n}x{m}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.nrows() != p || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "C is {}x{}, expected {p}x{n}",
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCoefficient(name));
            }
        }
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// State dimension.
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.d.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_siso(&self) -> bool {
        self.inputs() == 1 && self.outputs() == 1
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.iter().all(|&v| v == 0.0)
    }

    /// `G(jw) = C (jwI - A)^-1 B + D` for every input/output pair.
    pub fn freq_response_matrix(&self, omega: f64) -> Result<DMatrix<C64>> {
        let n = self.order();
        let to_c = |m: &DMatrix<f64>| m.map(|v| C64::new(v, 0.0));
        if n == 0 {
            return Ok(to_c(&self.d));
        }
        let mut pencil = -to_c(&self.a);
        for i in 0..n {
            pencil[(i, i)] += C64::new(0.0, omega);
        }
        let lu = pencil.lu();
        let x = lu
            .solve(&to_c(&self.b))
            .ok_or(Error::PoleOnImaginaryAxis { omega })?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::PoleOnImaginaryAxis { omega });
        }
        Ok(to_c(&self.c) * x + to_c(&self.d))
    }

    /// `C (-A)^-1 B + D`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        Ok(self.freq_response_matrix(0.0)?.map(|v| v.re))
    }

    /// `dx = A x + B u` without allocating.
    pub fn derivative_into(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let n = self.order();
        let a = self.a.as_slice();
        let b = self.b.as_slice();
        dx[..n].fill(0.0);
        // column-major storage
        for (j, &xj) in x.iter().enumerate().take(n) {
            let col = &a[j * n..(j + 1) * n];
            for i in 0..n {
                dx[i] += col[i] * xj;
            }
        }
        for (k, &uk) in u.iter().enumerate() {
            let col = &b[k * n..(k + 1) * n];
            for i in 0..n {
                dx[i] += col[i] * uk;
            }
        }
    }

    /// Single-output convenience: `(C x + D u)[row]`.
    pub fn output_row(&self, row: usize, x: &[f64], u: &[f64]) -> f64 {
        let p = self.outputs();
        let c = self.c.as_slice();
        let d = self.d.as_slice();
        let mut y = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            y += c[j * p + row] * xj;
        }
        for (k, &uk) in u.iter().enumerate() {
            y += d[k * p + row] * uk;
        }
        y
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }
}

fn write_controllable_canonical(
    num: &[f64],
    den: &[f64],
    a: &mut DMatrix<f64>,
    b: &mut DMatrix<f64>,
    c: &mut DMatrix<f64>,
    d: &mut DMatrix<f64>,
) {
    let n = den.len() - 1;
    let lead = den[0];
    // numerator padded to n + 1 coefficients, both normalised by den[0]
    let pad = n + 1 - num.len();
    let bn = |k: usize| if k < pad { 0.0 } else { num[k - pad] / lead };
    let an = |k: usize| den[k] / lead;

    let d0 = bn(0);
    a.fill(0.0);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    b.fill(0.0);
    if n > 0 {
        b[(n - 1, 0)] = 1.0;
    }
    for k in 1..=n {
        // x_1 carries the lowest power; row n-1 holds -a_n ... -a_1
        a[(n - 1, n - k)] = -an(k);
        c[(0, n - k)] = bn(k) - an(k) * d0;
    }
    d[(0, 0)] = d0;
}

/// Controllable canonical (companion) realization of a proper transfer
/// function. The state dimension equals the denominator degree.
pub fn realize(tf: &TransferFunction) -> Result<StateSpace> {
    let n = tf.order();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut c = DMatrix::zeros(1, n);
    let mut d = DMatrix::zeros(1, 1);
    write_controllable_canonical(tf.num(), tf.den(), &mut a, &mut b, &mut c, &mut d);
    StateSpace::new(a, b, c, d)
}

/// One RK4 step with the input held over the step. Returns the new state and
/// the output evaluated at the post-step state.
pub fn step_rk4(
    model: &StateSpace,
    state: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            value: dt,
            reason: "must be finite and positive",
        });
    }
    if state.len() != model.order() || u.len() != model.inputs() {
        return Err(Error::DimensionMismatch(format!(
            "state {} / input {} for a model of order {} with {} inputs",
            state.len(),
            u.len(),
            model.order(),
            model.inputs()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            channel: "input",
            step: None,
        });
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            channel: "state",
            step: None,
        });
    }
    let mut next = state.clone();
    let mut ws = Rk4Workspace::new(model.order());
    let u_slice = u.as_slice();
    ws.step(next.as_mut_slice(), dt, |_, x, dx| {
        model.derivative_into(x, u_slice, dx)
    });
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            channel: "state",
            step: None,
        });
    }
    let y = model.output(&next, u);
    Ok((next, y))
}

impl FrequencyResponse for StateSpace {
    fn freq_response(&self, omega: f64) -> Result<C64> {
        if !self.is_siso() {
            return Err(Error::DimensionMismatch(format!(
                "scalar frequency response needs a SISO model, got {}x{}",
                self.outputs(),
                self.inputs()
            )));
        }
        Ok(self.freq_response_matrix(omega)?[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn pure_gain_has_no_states() {
        let ss = realize(&TransferFunction::gain(1.0).unwrap()).unwrap();
        assert_eq!(ss.order(), 0);
        assert_eq!(ss.d()[(0, 0)], 1.0);
        assert_eq!(ss.freq_response(3.0).unwrap(), C64::new(1.0, 0.0));
    }

    #[test]
    fn integrator_realization() {
        let ss = realize(&TransferFunction::new(vec![1.0], vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(ss.order(), 1);
        assert_eq!(ss.a()[(0, 0)], 0.0);
        let mut x = dvector![0.0];
        let u = dvector![1.0];
        let dt = 0.125;
        for k in 1..=16 {
            let (nx, y) = step_rk4(&ss, &x, &u, dt).unwrap();
            x = nx;
            assert_eq!(y[0], k as f64 * dt);
        }
        assert!(matches!(
            ss.freq_response(0.0),
            Err(Error::PoleOnImaginaryAxis { .. })
        ));
    }

    #[test]
    fn zero_state_zero_input_is_fixed_point() {
        let tf = TransferFunction::new(vec![1.0, 2.0], vec![1.0, 3.0, 5.0]).unwrap();
        let ss = realize(&tf).unwrap();
        let (x, y) = step_rk4(&ss, &dvector![0.0, 0.0], &dvector![0.0], 1e-3).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn biproper_feedthrough() {
        // (2s + 3) / (s + 1) = 2 + 1 / (s + 1)
        let tf = TransferFunction::new(vec![2.0, 3.0], vec![1.0, 1.0]).unwrap();
        let ss = realize(&tf).unwrap();
        assert_eq!(ss.d()[(0, 0)], 2.0);
        assert_eq!(ss.c()[(0, 0)], 1.0);
        for w in [0.0, 0.5, 7.0] {
            let diff = tf.freq_response(w).unwrap() - ss.freq_response(w).unwrap();
            assert!(diff.norm() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let ss = realize(&TransferFunction::new(vec![1.0], vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(
            step_rk4(&ss, &dvector![f64::NAN], &dvector![0.0], 1e-3),
            Err(Error::NonFinite { channel: "state", .. })
        ));
        assert!(matches!(
            step_rk4(&ss, &dvector![0.0], &dvector![f64::INFINITY], 1e-3),
            Err(Error::NonFinite { channel: "input", .. })
        ));
        assert!(step_rk4(&ss, &dvector![0.0], &dvector![0.0], 0.0).is_err());
        assert!(matches!(
            StateSpace::new(
                DMatrix::zeros(2, 2),
                DMatrix::zeros(1, 1),
                DMatrix::zeros(1, 2),
                DMatrix::zeros(1, 1)
            ),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
