/// Scratch space for the classical fourth-order Runge-Kutta step.
///
/// The derivative callback receives the stage offset within the step
/// (0, 1/2, 1/2, 1) so that callers can interpolate inputs across the step.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.k1.len()
    }

    pub fn step<F>(&mut self, x: &mut [f64], dt: f64, mut f: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        debug_assert_eq!(x.len(), self.k1.len());
        let half = 0.5 * dt;
        let axpy = |out: &mut [f64], x: &[f64], h: f64, k: &[f64]| {
            for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
                *o = xi + h * ki;
            }
        };

        f(0.0, x, &mut self.k1);
        axpy(&mut self.stage, x, half, &self.k1);
        f(0.5, &self.stage, &mut self.k2);
        axpy(&mut self.stage, x, half, &self.k2);
        f(0.5, &self.stage, &mut self.k3);
        axpy(&mut self.stage, x, dt, &self.k3);
        f(1.0, &self.stage, &mut self.k4);

        let sixth = dt / 6.0;
        for ((((xi, a), b), c), d) in x
            .iter_mut()
            .zip(&self.k1)
            .zip(&self.k2)
            .zip(&self.k3)
            .zip(&self.k4)
        {
            *xi += sixth * (a + 2.0 * (b + c) + d);
        }
    }
}

/// Stack-allocated RK4 step for small fixed-size systems.
#[inline]
pub fn rk4_step_fixed<const N: usize, F>(x: &mut [f64; N], dt: f64, mut f: F)
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let half = 0.5 * dt;
    let shift = |h: f64, k: &[f64; N]| {
        let mut s = *x;
        for i in 0..N {
            s[i] += h * k[i];
        }
        s
    };
    let k1 = f(0.0, x);
    let k2 = f(0.5, &shift(half, &k1));
    let k3 = f(0.5, &shift(half, &k2));
    let k4 = f(1.0, &shift(dt, &k3));
    let sixth = dt / 6.0;
    for i in 0..N {
        x[i] += sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
}
