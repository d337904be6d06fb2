//! Scan-pattern reference generators and the scan clock.
//!
//! All references are functions of the scan distance `tau`, which advances
//! at the scan-rate multiplier: `dtau/dt = eps`. Sinusoidal raster and spiral
//! patterns come from a neutrally stable oscillator bank (the exosystem);
//! the triangular raster is evaluated in closed form.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::lti::{rk4_step_fixed, Rk4Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanPattern {
    Raster,
    Spiral,
    TriangularRaster,
}

/// Scan size `L` (um), nominal line period `T_l` (s) and line count `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGeometry {
    pub size: f64,
    pub line_period: f64,
    pub lines: u32,
}

impl ScanGeometry {
    pub fn new(size: f64, line_period: f64, lines: u32) -> Result<Self> {
        require_positive("L", size)?;
        require_positive("T_l", line_period)?;
        if lines < 2 {
            return Err(Error::InvalidParameter {
                name: "N",
                value: lines as f64,
                reason: "at least two scan lines are required",
            });
        }
        Ok(Self {
            size,
            line_period,
            lines,
        })
    }

    /// `A_l = L / 2`.
    pub fn amplitude(&self) -> f64 {
        self.size / 2.0
    }

    /// `w_l = 2 pi / T_l`.
    pub fn line_freq(&self) -> f64 {
        TAU / self.line_period
    }

    /// `w_fr = 2 pi / ((2N - 1) T_l)`.
    pub fn raster_frame_freq(&self) -> f64 {
        TAU / ((2.0 * self.lines as f64 - 1.0) * self.line_period)
    }

    /// `w_fs = 2 pi / (4 N T_l)`.
    pub fn spiral_frame_freq(&self) -> f64 {
        TAU / (4.0 * self.lines as f64 * self.line_period)
    }

    /// Scan distance covered by one image: half a slow-axis period for the
    /// rasters, a quarter of the envelope period for the spiral.
    pub fn scan_length(&self, pattern: ScanPattern) -> f64 {
        match pattern {
            ScanPattern::Raster | ScanPattern::TriangularRaster => {
                (2.0 * self.lines as f64 - 1.0) * self.line_period / 2.0
            }
            ScanPattern::Spiral => self.lines as f64 * self.line_period,
        }
    }
}

/// Linear exosystem `dxi/dtau = A_r xi`, `r = C_r xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExosystemSpec {
    pub pattern: ScanPattern,
    pub geometry: ScanGeometry,
    pub a_r: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub xi0: DVector<f64>,
}

fn oscillator_pair(w1: f64, w2: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 1)] = w1;
    a[(1, 0)] = -w1;
    a[(2, 3)] = w2;
    a[(3, 2)] = -w2;
    a
}

/// Sinusoidal raster: `r_x = A_l sin(w_l tau - pi/2)`, `r_y = A_l sin(w_fr tau - pi/2)`.
pub fn make_raster(size: f64, line_period: f64, lines: u32) -> Result<ExosystemSpec> {
    let g = ScanGeometry::new(size, line_period, lines)?;
    let al = g.amplitude();
    let mut c_r = DMatrix::zeros(2, 4);
    c_r[(0, 0)] = 1.0;
    c_r[(1, 2)] = 1.0;
    Ok(ExosystemSpec {
        pattern: ScanPattern::Raster,
        geometry: g,
        a_r: oscillator_pair(g.line_freq(), g.raster_frame_freq()),
        c_r,
        xi0: DVector::from_vec(vec![-al, 0.0, -al, 0.0]),
    })
}

/// Sinusoidally modulated spiral, realised as two oscillators at
/// `w_l + w_fs` and `w_l - w_fs`.
pub fn make_spiral(size: f64, line_period: f64, lines: u32) -> Result<ExosystemSpec> {
    let g = ScanGeometry::new(size, line_period, lines)?;
    let half = g.amplitude() / 2.0;
    let wl = g.line_freq();
    let wfs = g.spiral_frame_freq();
    // xi_1 = half sin(w+ tau), xi_2 = half cos(w+ tau); likewise xi_3, xi_4 at w-
    let mut c_r = DMatrix::zeros(2, 4);
    c_r[(0, 0)] = 1.0;
    c_r[(0, 2)] = -1.0;
    c_r[(1, 1)] = -1.0;
    c_r[(1, 3)] = 1.0;
    Ok(ExosystemSpec {
        pattern: ScanPattern::Spiral,
        geometry: g,
        a_r: oscillator_pair(wl + wfs, wl - wfs),
        c_r,
        xi0: DVector::from_vec(vec![0.0, half, 0.0, half]),
    })
}

impl ExosystemSpec {
    pub fn output(&self, xi: &[f64]) -> [f64; 2] {
        let n = self.a_r.nrows();
        let mut r = [0.0; 2];
        for (row, out) in r.iter_mut().enumerate() {
            *out = (0..n).map(|j| self.c_r[(row, j)] * xi[j]).sum();
        }
        r
    }

    /// Closed-form reference at scan distance `tau`.
    pub fn reference_at(&self, tau: f64) -> [f64; 2] {
        let g = &self.geometry;
        let al = g.amplitude();
        match self.pattern {
            ScanPattern::Raster => [
                al * (g.line_freq() * tau - FRAC_PI_2).sin(),
                al * (g.raster_frame_freq() * tau - FRAC_PI_2).sin(),
            ],
            ScanPattern::Spiral => {
                let radius = al * (g.spiral_frame_freq() * tau).sin();
                let phase = g.line_freq() * tau;
                [radius * phase.cos(), radius * phase.sin()]
            }
            ScanPattern::TriangularRaster => triangular_reference(g, tau),
        }
    }

    /// Amplitude `sqrt(xi_{2k}^2 + xi_{2k+1}^2)` of each oscillator pair.
    pub fn oscillator_amplitudes(xi: &[f64]) -> Vec<f64> {
        xi.chunks(2).map(|p| p[0].hypot(p[1])).collect()
    }
}

/// One RK4 step of `dxi/dt = eps A_r xi`, taken as a step of `eps * dt` in
/// scan distance. Returns `r = C_r xi` at the new state.
pub fn exo_step(
    spec: &ExosystemSpec,
    xi: &mut [f64],
    eps: f64,
    dt: f64,
    ws: &mut Rk4Workspace,
) -> Result<[f64; 2]> {
    require_positive("eps", eps)?;
    require_positive("dt", dt)?;
    let n = spec.a_r.nrows();
    let a = spec.a_r.as_slice();
    let h = eps * dt;
    if let (Ok(x4), Ok(a16)) = (<&mut [f64; 4]>::try_from(&mut *xi), <&[f64; 16]>::try_from(a)) {
        rk4_step_fixed(x4, h, |_, x| {
            let mut dx = [0.0; 4];
            for j in 0..4 {
                for i in 0..4 {
                    dx[i] += a16[j * 4 + i] * x[j];
                }
            }
            dx
        });
    } else {
        ws.step(xi, h, |_, x, dx| {
            dx.fill(0.0);
            for (col, &xj) in a.chunks_exact(n).zip(x) {
                for (d, &aij) in dx.iter_mut().zip(col) {
                    *d += aij * xj;
                }
            }
        });
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            channel: "exosystem state",
            step: None,
        });
    }
    Ok(spec.output(xi))
}

/// Piecewise-linear, 2pi-periodic triangle with `tri(0) = 0`, `tri(pi/2) = 1`.
pub fn tri(theta: f64) -> f64 {
    let p = theta.rem_euclid(TAU);
    if p < FRAC_PI_2 {
        p * 2.0 / PI
    } else if p < 3.0 * FRAC_PI_2 {
        2.0 - p * 2.0 / PI
    } else {
        -4.0 + p * 2.0 / PI
    }
}

/// Partial Fourier sum of [`tri`] over its first `harmonics` odd harmonics.
pub fn tri_fourier(theta: f64, harmonics: u32) -> f64 {
    let sum: f64 = (0..harmonics)
        .map(|k| {
            let m = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (m * theta).sin() / (m * m)
        })
        .sum();
    8.0 / (PI * PI) * sum
}

/// Conventional raster: `r = A_l tri(w tau - pi/2)` on both axes.
pub fn triangular_reference(g: &ScanGeometry, tau: f64) -> [f64; 2] {
    let al = g.amplitude();
    [
        al * tri(g.line_freq() * tau - FRAC_PI_2),
        al * tri(g.raster_frame_freq() * tau - FRAC_PI_2),
    ]
}

/// Time `t`, scan distance `tau` and the multiplier applied over the last step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScanClock {
    pub t: f64,
    pub tau: f64,
    pub eps: f64,
}

/// Advances the clock by `dt` with `eps` held over the step, so `tau`
/// grows by exactly `eps * dt`.
pub fn advance_clock(clock: ScanClock, eps: f64, dt: f64) -> Result<ScanClock> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "eps",
            value: eps,
            reason: "the scan-rate multiplier must stay positive for tau(t) to be invertible",
        });
    }
    require_positive("dt", dt)?;
    Ok(ScanClock {
        t: clock.t + dt,
        tau: clock.tau + eps * dt,
        eps,
    })
}

/// Stateful reference source used by the simulation driver.
#[derive(Debug, Clone)]
pub enum ReferenceGenerator {
    Exosystem {
        spec: ExosystemSpec,
        xi: Vec<f64>,
        ws: Rk4Workspace,
    },
    Triangular {
        geometry: ScanGeometry,
    },
}

impl ReferenceGenerator {
    pub fn new(pattern: ScanPattern, g: ScanGeometry) -> Result<Self> {
        let spec = match pattern {
            ScanPattern::Raster => make_raster(g.size, g.line_period, g.lines)?,
            ScanPattern::Spiral => make_spiral(g.size, g.line_period, g.lines)?,
            ScanPattern::TriangularRaster => return Ok(Self::Triangular { geometry: g }),
        };
        let xi = spec.xi0.as_slice().to_vec();
        let ws = Rk4Workspace::new(xi.len());
        Ok(Self::Exosystem { spec, xi, ws })
    }

    /// Reference at `tau = 0`.
    pub fn initial(&self) -> [f64; 2] {
        match self {
            Self::Exosystem { spec, .. } => spec.output(spec.xi0.as_slice()),
            Self::Triangular { geometry } => triangular_reference(geometry, 0.0),
        }
    }

    /// Advances by one time step; `tau_after` is the scan distance at the end
    /// of the step (used by the closed-form generator).
    pub fn advance(&mut self, eps: f64, dt: f64, tau_after: f64) -> Result<[f64; 2]> {
        match self {
            Self::Exosystem { spec, xi, ws } => exo_step(spec, xi, eps, dt, ws),
            Self::Triangular { geometry } => Ok(triangular_reference(geometry, tau_after)),
        }
    }
}
