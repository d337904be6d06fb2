//! Comparison scan-rate laws and the closed-form rate optimum on the tilted
//! bent plane.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::plant::{sensitivity_slope, z_actuator, PlantConfig};
use crate::sim::{run_scan, Analysis, RateLaw, RunSummary, ScanSetup, TraceSink};
use crate::topography::Topography;
use crate::trajectory::{ScanGeometry, ScanPattern};

/// Steady-state cost map of the sinusoidal raster on the tilted bent plane.
///
/// The x reference is a sinusoid of amplitude `A_l`, so the height seen by
/// the Z loop is a sinusoid of amplitude `A(tau) = |coupling y(tau) + slope| A_l`
/// with `y(tau) = A_l sin(omega_fr tau - pi/2)`, and the line error is close
/// to `A k_Sz omega_l eps` while `eps omega_l` sits on the low-frequency slope
/// of the sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// nm.
    pub e_z_star: f64,
    /// s/rad.
    pub k_sz: f64,
    /// Line frequency, rad per unit `tau`.
    pub omega_l: f64,
    /// Frame frequency, rad per unit `tau`.
    pub omega_fr: f64,
    /// um.
    pub amplitude: f64,
    pub coupling: f64,
    pub slope: f64,
}

impl OracleSpec {
    /// Oracle for a sinusoidal raster over a bent plane, `None` for any other
    /// combination.
    pub fn for_scan(
        pattern: ScanPattern,
        geometry: &ScanGeometry,
        topography: &Topography,
        plant: &PlantConfig,
        e_z_star: f64,
    ) -> Result<Option<Self>> {
        let (ScanPattern::Raster, Topography::TiltedBentPlane { coupling, slope }) = (pattern, *topography) else {
            return Ok(None);
        };
        Ok(Some(Self {
            e_z_star,
            k_sz: sensitivity_slope(&z_actuator(), plant.z_gain)?,
            omega_l: geometry.line_freq(),
            omega_fr: geometry.raster_frame_freq(),
            amplitude: geometry.amplitude(),
            coupling,
            slope,
        }))
    }

    /// Height amplitude along the current line, nm.
    pub fn height_amplitude(&self, tau: f64) -> f64 {
        let y = self.amplitude * (self.omega_fr * tau - FRAC_PI_2).sin();
        (self.coupling * y + self.slope).abs() * self.amplitude
    }
}

pub fn oracle_cost(eps: f64, tau: f64, spec: &OracleSpec) -> f64 {
    let dev = spec.height_amplitude(tau) * spec.k_sz * spec.omega_l * eps - spec.e_z_star;
    -dev * dev
}

pub fn oracle_opt_rate(tau: f64, spec: &OracleSpec) -> f64 {
    spec.e_z_star / (spec.height_amplitude(tau) * spec.k_sz * spec.omega_l)
}

/// Supremum and mean of a signal over `[start, end]`, fed one sample at a
/// time with nondecreasing abscissae; the mean is the trapezoidal integral
/// divided by the span length.
#[derive(Debug, Clone)]
pub struct SpanStats {
    start: f64,
    end: f64,
    prev: Option<(f64, f64)>,
    first: Option<f64>,
    last: f64,
    sup: f64,
    area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanSummary {
    pub sup: f64,
    pub mean: f64,
}

impl SpanStats {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(Error::InvalidParameter {
                name: "span",
                value: end - start,
                reason: "the span must be finite with end > start",
            });
        }
        Ok(Self {
            start,
            end,
            prev: None,
            first: None,
            last: f64::NEG_INFINITY,
            sup: 0.0,
            area: 0.0,
        })
    }

    pub fn push(&mut self, tau: f64, value: f64) {
        self.first.get_or_insert(tau);
        self.last = tau;
        if let Some((t0, v0)) = self.prev.replace((tau, value)) {
            let (a, b) = (t0.max(self.start), tau.min(self.end));
            if b < a || tau <= t0 {
                return;
            }
            let at = |s: f64| v0 + (value - v0) * (s - t0) / (tau - t0);
            let (va, vb) = (at(a), at(b));
            self.sup = self.sup.max(va.abs()).max(vb.abs());
            self.area += 0.5 * (b - a) * (va + vb);
        }
    }

    pub fn finish(&self) -> Result<SpanSummary> {
        match self.first {
            Some(first) if first <= self.start && self.last >= self.end => Ok(SpanSummary {
                sup: self.sup,
                mean: self.area / (self.end - self.start),
            }),
            _ => Err(Error::SpanNotCovered {
                start: self.start,
                end: self.end,
            }),
        }
    }
}

/// `(sup, mean)` of `|eps_hat - eps_hat*|` over `[start, end]` from
/// `(tau, eps_hat)` samples.
pub fn adaptation_error(
    samples: impl IntoIterator<Item = (f64, f64)>,
    oracle: &OracleSpec,
    start: f64,
    end: f64,
) -> Result<SpanSummary> {
    let mut stats = SpanStats::new(start, end)?;
    for (tau, eps_hat) in samples {
        stats.push(tau, (eps_hat - oracle_opt_rate(tau, oracle)).abs());
    }
    stats.finish()
}

/// Parameters of the gradient-reactive comparison law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenParams {
    /// 1/s.
    pub kappa: f64,
    /// nm/um.
    pub grad_star: f64,
    /// nm.
    pub d_star: f64,
    /// um/s.
    pub x_dot_star: f64,
}

impl Default for RenParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            grad_star: 50.0,
            d_star: 3.0,
            x_dot_star: 10.0,
        }
    }
}

impl RenParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("ren.kappa", self.kappa)?;
        require_positive("ren.grad_star", self.grad_star)?;
        require_positive("ren.d_star", self.d_star)?;
        require_positive("ren.x_dot_star", self.x_dot_star)?;
        Ok(())
    }

    /// Multiplier at which the fast axis moves at `x_dot_star`: a line
    /// covers `size` in half a line period.
    pub fn reference_rate(&self, geometry: &ScanGeometry) -> f64 {
        self.x_dot_star * geometry.line_period / (2.0 * geometry.size)
    }
}

/// Reactive law with its speed normalisation and clamp bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenLaw {
    pub params: RenParams,
    /// Multiplier corresponding to `x_dot_star`.
    pub eps_ref: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl RenLaw {
    pub fn new(params: RenParams, geometry: &ScanGeometry, eps_min: f64, eps_max: f64) -> Result<Self> {
        params.validate()?;
        require_positive("eps_min", eps_min)?;
        if !(eps_max > eps_min) {
            return Err(Error::InvalidParameter {
                name: "eps_max",
                value: eps_max,
                reason: "must exceed eps_min",
            });
        }
        Ok(Self {
            params,
            eps_ref: params.reference_rate(geometry),
            eps_min,
            eps_max,
        })
    }
}

/// `eps' = clamp(eps + kappa (1 - max(|grad| nu / grad*, |e_z| / d*)) eps dt)`
/// with `nu = eps / eps_ref` the speed relative to `x_dot_star`, so the
/// gradient term measures the height slew the tip actually experiences.
pub fn ren_step(grad: f64, e_z: f64, eps: f64, law: &RenLaw, dt: f64) -> f64 {
    let p = &law.params;
    let nu = eps / law.eps_ref;
    let load = (grad.abs() * nu / p.grad_star).max(e_z.abs() / p.d_star);
    (eps + p.kappa * (1.0 - load) * eps * dt).clamp(law.eps_min, law.eps_max)
}

/// Constant-rate scan that finishes in `duration` seconds, within one step.
pub fn fixed_rate_for_duration(setup: &ScanSetup, duration: f64, eps_min: f64, eps_max: f64) -> Result<f64> {
    require_positive("duration", duration)?;
    let eps = setup.tau_stop() / duration;
    if !(eps_min..=eps_max).contains(&eps) {
        return Err(Error::RateOutOfBounds {
            eps,
            min: eps_min,
            max: eps_max,
        });
    }
    Ok(eps)
}

pub fn run_fixed_rate(
    setup: &ScanSetup,
    duration: f64,
    eps_min: f64,
    eps_max: f64,
    analysis: &Analysis,
    sink: &mut dyn TraceSink,
) -> Result<RunSummary> {
    let eps = fixed_rate_for_duration(setup, duration, eps_min, eps_max)?;
    run_scan(setup, &RateLaw::Fixed { eps }, analysis, sink)
}
