//! Extremum-seeking scan-rate adaptation in the `tau` timescale: sinusoidal
//! dither, mean-over-perturbation-period gradient estimate and an
//! integrating optimiser.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::metric::SlidingIntegral;

pub const DEFAULT_EPS_MIN: f64 = 1e-4;
pub const DEFAULT_EPS_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsParams {
    /// Dither amplitude.
    pub a: f64,
    /// Dither frequency, rad per unit `tau`.
    pub omega: f64,
    /// Optimiser gain.
    pub delta: f64,
    /// Demodulation delay in `tau`.
    pub tau_phi: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl EsParams {
    pub fn scenario_one() -> Self {
        Self {
            a: 0.001,
            omega: 210.0,
            delta: 2.0,
            tau_phi: 6e-3,
            eps_min: DEFAULT_EPS_MIN,
            eps_max: DEFAULT_EPS_MAX,
        }
    }

    pub fn scenario_two() -> Self {
        Self {
            omega: 200.0,
            delta: 0.5,
            ..Self::scenario_one()
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("a", self.a)?;
        require_positive("omega", self.omega)?;
        require_positive("delta", self.delta)?;
        require_positive("eps_min", self.eps_min)?;
        if !(self.tau_phi.is_finite() && self.tau_phi >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau_phi",
                value: self.tau_phi,
                reason: "must be finite and nonnegative",
            });
        }
        if !(self.eps_max > self.eps_min && self.eps_max.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "eps_max",
                value: self.eps_max,
                reason: "must be finite and exceed eps_min",
            });
        }
        Ok(())
    }

    /// One dither period, `2 pi / omega`.
    pub fn dither_period(&self) -> f64 {
        TAU / self.omega
    }

    /// Scan distance before the optimiser engages: one line plus one dither
    /// period of history.
    pub fn gate_tau(&self, line_period: f64) -> f64 {
        line_period + self.dither_period()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dithered {
    pub eps: f64,
    pub clamped: bool,
}

/// `eps = eps_hat + a sin(omega tau)`, clamped to `[eps_min, eps_max]`.
pub fn dither(eps_hat: f64, tau: f64, params: &EsParams) -> Dithered {
    let raw = eps_hat + params.a * (params.omega * tau).sin();
    let eps = raw.clamp(params.eps_min, params.eps_max);
    Dithered {
        eps,
        clamped: eps != raw,
    }
}

/// `(omega / (a pi)) int q(s) sin(omega (s - tau_phi)) ds` over the last
/// dither period, by the trapezoidal rule on the stored abscissae.
pub fn mopp(window: &[(f64, f64)], a: f64, omega: f64, tau_phi: f64) -> Result<f64> {
    let period = TAU / omega;
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return Err(Error::ColdWindow("gradient estimate"));
    };
    if last.0 - first.0 < period * (1.0 - 1e-12) {
        return Err(Error::ColdWindow("gradient estimate"));
    }
    let f = |&(s, q): &(f64, f64)| q * (omega * (s - tau_phi)).sin();
    let integral: f64 = window
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (f(&w[0]) + f(&w[1])))
        .sum();
    Ok(omega / (a * PI) * integral)
}

/// Streaming form of [`mopp`].
#[derive(Debug, Clone)]
pub struct MoppFilter {
    a: f64,
    omega: f64,
    tau_phi: f64,
    window: SlidingIntegral,
}

impl MoppFilter {
    pub fn new(a: f64, omega: f64, tau_phi: f64) -> Result<Self> {
        require_positive("a", a)?;
        require_positive("omega", omega)?;
        Ok(Self {
            a,
            omega,
            tau_phi,
            window: SlidingIntegral::new(TAU / omega)?,
        })
    }

    pub fn push(&mut self, tau: f64, q: f64) {
        self.window
            .push(tau, q * (self.omega * (tau - self.tau_phi)).sin());
    }

    pub fn is_warm(&self) -> bool {
        self.window.is_warm()
    }

    pub fn eta(&self) -> Result<f64> {
        if !self.is_warm() {
            return Err(Error::ColdWindow("gradient estimate"));
        }
        Ok(self.omega / (self.a * PI) * self.window.integral())
    }
}

/// Explicit Euler step of `d eps_hat / d tau = a^2 omega delta eta`; a closed
/// gate leaves the estimate unchanged.
pub fn optimizer_step(eps_hat: f64, eta: f64, params: &EsParams, dtau: f64, gate: bool) -> Result<f64> {
    require_positive("dtau", dtau)?;
    if !gate {
        return Ok(eps_hat);
    }
    if !eta.is_finite() {
        return Err(Error::NonFinite {
            channel: "gradient estimate",
            step: None,
        });
    }
    Ok(eps_hat + params.a * params.a * params.omega * params.delta * eta * dtau)
}

/// Dither, gradient estimator and optimiser with the start-up gate.
#[derive(Debug, Clone)]
pub struct EsController {
    params: EsParams,
    eps_hat: f64,
    gate_tau: f64,
    gate: bool,
    mopp: MoppFilter,
    clamp_events: u64,
}

impl EsController {
    pub fn new(params: EsParams, eps_hat0: f64, line_period: f64) -> Result<Self> {
        params.validate()?;
        require_positive("eps_hat0", eps_hat0)?;
        Ok(Self {
            eps_hat: eps_hat0,
            gate_tau: params.gate_tau(line_period),
            gate: false,
            mopp: MoppFilter::new(params.a, params.omega, params.tau_phi)?,
            clamp_events: 0,
            params,
        })
    }

    pub fn params(&self) -> &EsParams {
        &self.params
    }

    pub fn eps_hat(&self) -> f64 {
        self.eps_hat
    }

    pub fn gate_tau(&self) -> f64 {
        self.gate_tau
    }

    pub fn gate_open(&self) -> bool {
        self.gate
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Scan-rate multiplier to apply from `tau`; counts clamp events.
    pub fn applied(&mut self, tau: f64) -> Dithered {
        let d = dither(self.eps_hat, tau, &self.params);
        if d.clamped {
            self.clamp_events += 1;
        }
        d
    }

    /// Feeds the performance sample at `tau` and, once `tau` reaches the gate,
    /// integrates the optimiser over the `dtau` just travelled. The estimate
    /// is kept inside the clamp bounds.
    pub fn update(&mut self, tau: f64, q: f64, dtau: f64) -> Result<()> {
        self.mopp.push(tau, q);
        self.gate = tau >= self.gate_tau;
        if self.gate {
            let eta = self.mopp.eta()?;
            let next = optimizer_step(self.eps_hat, eta, &self.params, dtau, true)?;
            // without the projection a clamped dither stops exciting the map
            // and the estimate can wind up past the bound
            self.eps_hat = next.clamp(self.params.eps_min, self.params.eps_max);
        }
        Ok(())
    }
}

/// Outcome of [`run_static_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct StaticMapRun {
    pub eps_hat: f64,
    /// `(tau, eps_hat)` every `record_every` steps.
    pub history: Vec<(f64, f64)>,
}

/// Closes the loop around a static performance map `q = map(eps)`, stepping
/// uniformly in `tau`.
pub fn run_static_map(
    map: impl Fn(f64) -> f64,
    params: EsParams,
    eps_hat0: f64,
    dtau: f64,
    tau_end: f64,
    record_every: usize,
) -> Result<StaticMapRun> {
    require_positive("dtau", dtau)?;
    // a static map responds instantly, so there is no line to wait for
    let mut es = EsController::new(params, eps_hat0, 0.0)?;
    let steps = (tau_end / dtau).ceil() as usize;
    let mut history = Vec::with_capacity(steps / record_every.max(1) + 1);
    let mut tau = 0.0;
    let eps0 = es.applied(0.0).eps;
    es.update(0.0, map(eps0), dtau)?;
    for k in 1..=steps {
        let eps = es.applied(tau).eps;
        tau = k as f64 * dtau;
        es.update(tau, map(eps), dtau)?;
        if record_every > 0 && k % record_every == 0 {
            history.push((tau, es.eps_hat()));
        }
    }
    Ok(StaticMapRun {
        eps_hat: es.eps_hat(),
        history,
    })
}
