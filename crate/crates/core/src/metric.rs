//! Per-line performance function `q = g_e(L_e) + g_s(L_s)` over sliding
//! windows indexed by scan distance `tau`.
//!
//! Samples arrive at fixed time steps, so their `tau` spacing varies with the
//! scan rate. Windows therefore interpolate their left boundary instead of
//! counting samples.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Running maximum of samples with `tau` in `[tau_now - span, tau_now]`.
///
/// Monotone wedge: stored values are strictly decreasing from front to back,
/// so a tie keeps the older sample.
#[derive(Debug, Clone)]
pub struct SlidingMax {
    span: f64,
    start: Option<f64>,
    last: f64,
    wedge: VecDeque<(f64, f64)>,
}

impl SlidingMax {
    pub fn new(span: f64) -> Result<Self> {
        require_positive("span", span)?;
        Ok(Self {
            span,
            start: None,
            last: f64::NEG_INFINITY,
            wedge: VecDeque::new(),
        })
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// `tau` must be strictly increasing across calls.
    pub fn push(&mut self, tau: f64, value: f64) {
        debug_assert!(tau > self.last, "tau must increase");
        self.last = tau;
        self.start.get_or_insert(tau);
        while self.wedge.back().is_some_and(|&(_, v)| v < value) {
            self.wedge.pop_back();
        }
        self.wedge.push_back((tau, value));
        let left = tau - self.span;
        while self.wedge.front().is_some_and(|&(t, _)| t < left) {
            self.wedge.pop_front();
        }
    }

    pub fn max(&self) -> Option<f64> {
        self.wedge.front().map(|&(_, v)| v)
    }

    /// True once the samples reach back a full span.
    pub fn is_warm(&self) -> bool {
        self.start.is_some_and(|s| self.last - s >= self.span)
    }

    pub fn len(&self) -> usize {
        self.wedge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wedge.is_empty()
    }
}

/// Trapezoidal integral of a piecewise-linear signal over
/// `[tau_now - span, tau_now]`, the left end interpolated between the two
/// samples bracketing it.
#[derive(Debug, Clone)]
pub struct SlidingIntegral {
    span: f64,
    start: Option<f64>,
    samples: VecDeque<(f64, f64)>,
    /// Trapezoid area between the first and last stored samples.
    area: f64,
    evictions: u32,
}

/// Evictions between exact recomputations of the running area.
const REBUILD_EVERY: u32 = 4096;

impl SlidingIntegral {
    pub fn new(span: f64) -> Result<Self> {
        require_positive("span", span)?;
        Ok(Self {
            span,
            start: None,
            samples: VecDeque::new(),
            area: 0.0,
            evictions: 0,
        })
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    fn segment((t0, v0): (f64, f64), (t1, v1): (f64, f64)) -> f64 {
        0.5 * (t1 - t0) * (v0 + v1)
    }

    /// `tau` must be strictly increasing across calls.
    pub fn push(&mut self, tau: f64, value: f64) {
        self.start.get_or_insert(tau);
        if let Some(&last) = self.samples.back() {
            debug_assert!(tau > last.0, "tau must increase");
            self.area += Self::segment(last, (tau, value));
        }
        self.samples.push_back((tau, value));
        let left = tau - self.span;
        // keep exactly one sample at or before the left boundary
        while self.samples.len() >= 2 && self.samples[1].0 <= left {
            let old = self.samples.pop_front().expect("nonempty");
            self.area -= Self::segment(old, self.samples[0]);
            self.evictions += 1;
        }
        if self.evictions >= REBUILD_EVERY {
            self.evictions = 0;
            self.area = self
                .samples
                .iter()
                .zip(self.samples.iter().skip(1))
                .map(|(&a, &b)| Self::segment(a, b))
                .sum();
        }
    }

    pub fn is_warm(&self) -> bool {
        match (self.start, self.samples.back()) {
            (Some(s), Some(&(t, _))) => t - s >= self.span,
            _ => false,
        }
    }

    /// Integral over the window, or over all samples while cold.
    pub fn integral(&self) -> f64 {
        let (Some(&first), Some(&(t_end, _))) = (self.samples.front(), self.samples.back()) else {
            return 0.0;
        };
        let left = t_end - self.span;
        if self.samples.len() < 2 || first.0 >= left {
            return self.area;
        }
        let second = self.samples[1];
        let frac = (left - first.0) / (second.0 - first.0);
        let v_left = first.1 + frac * (second.1 - first.1);
        self.area - Self::segment(first, (left, v_left))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// History of a signal sufficient to read it `delay` behind the newest sample.
#[derive(Debug, Clone)]
pub struct DelayLine {
    delay: f64,
    samples: VecDeque<(f64, f64)>,
}

impl DelayLine {
    pub fn new(delay: f64) -> Result<Self> {
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "delay",
                value: delay,
                reason: "must be finite and nonnegative",
            });
        }
        Ok(Self {
            delay,
            samples: VecDeque::new(),
        })
    }

    pub fn push(&mut self, tau: f64, value: f64) {
        self.samples.push_back((tau, value));
        let target = tau - self.delay;
        while self.samples.len() >= 2 && self.samples[1].0 <= target {
            self.samples.pop_front();
        }
    }

    /// Value at `tau_now - delay`, linearly interpolated.
    pub fn delayed(&self) -> Result<f64> {
        let &(t_end, v_end) = self
            .samples
            .back()
            .ok_or(Error::InsufficientHistory { tau: -self.delay })?;
        if self.delay == 0.0 {
            return Ok(v_end);
        }
        delayed_rate(self.samples.iter().copied(), t_end - self.delay)
    }
}

/// Linear interpolation of `(tau, value)` samples at `at`.
pub fn delayed_rate(samples: impl IntoIterator<Item = (f64, f64)>, at: f64) -> Result<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for (t, v) in samples {
        if t == at {
            return Ok(v);
        }
        if t > at {
            return match prev {
                Some((t0, v0)) => Ok(v0 + (at - t0) / (t - t0) * (v - v0)),
                None => Err(Error::InsufficientHistory { tau: at }),
            };
        }
        prev = Some((t, v));
    }
    Err(Error::InsufficientHistory { tau: at })
}

/// Norm exponent of the line error: `p` in `[1, inf]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormExponent(pub f64);

impl NormExponent {
    pub const INFINITY: Self = Self(f64::INFINITY);

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn validate(self) -> Result<()> {
        if self.0 >= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "metric.p",
                value: self.0,
                reason: "the norm exponent must lie in [1, inf]",
            })
        }
    }
}

/// Accuracy score `g_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ErrorScore {
    /// `-(v - target)^2`.
    SquaredDeviation { target: f64 },
}

/// Speed score `g_s`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateScore {
    #[default]
    Zero,
    /// `gain * v`.
    Linear { gain: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfSpec {
    pub p: NormExponent,
    pub line_period: f64,
    pub tau_phi: f64,
    pub g_e: ErrorScore,
    pub g_s: RateScore,
}

impl PerfSpec {
    /// `q = -(max |e_z| over the last line - target)^2`.
    pub fn max_error_setpoint(line_period: f64, tau_phi: f64, target: f64) -> Self {
        Self {
            p: NormExponent::INFINITY,
            line_period,
            tau_phi,
            g_e: ErrorScore::SquaredDeviation { target },
            g_s: RateScore::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.p.validate()?;
        require_positive("line_period", self.line_period)?;
        if !(self.tau_phi >= 0.0 && self.tau_phi <= self.line_period) {
            return Err(Error::InvalidParameter {
                name: "tau_phi",
                value: self.tau_phi,
                reason: "the delay must lie in [0, T_l]",
            });
        }
        Ok(())
    }
}

pub fn perf(l_e: f64, l_s: f64, spec: &PerfSpec) -> f64 {
    let ge = match spec.g_e {
        ErrorScore::SquaredDeviation { target } => -(l_e - target) * (l_e - target),
    };
    let gs = match spec.g_s {
        RateScore::Zero => 0.0,
        RateScore::Linear { gain } => gain * l_s,
    };
    ge + gs
}

/// Norm of `|e_z|` over a complete window of `(tau, e_z)` samples spanning
/// `span`: the maximum for `p = inf`, otherwise the trapezoidal
/// `((1/span) int |e_z|^p)^(1/p)` over the stored abscissae.
pub fn line_error_norm(window: &[(f64, f64)], p: NormExponent, span: f64) -> Result<f64> {
    p.validate()?;
    require_positive("span", span)?;
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return Err(Error::ColdWindow("line error"));
    };
    if last.0 - first.0 < span * (1.0 - 1e-12) {
        return Err(Error::ColdWindow("line error"));
    }
    if p.is_infinite() {
        return Ok(window.iter().map(|s| s.1.abs()).fold(0.0, f64::max));
    }
    let area: f64 = window
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1.abs().powf(p.0) + w[1].1.abs().powf(p.0)))
        .sum();
    Ok((area / (last.0 - first.0)).powf(1.0 / p.0))
}

/// `q_e(tau) = max |e_z|` over the past scan line.
pub fn q_e_moving_max(window: &[(f64, f64)], line_period: f64) -> Result<f64> {
    line_error_norm(window, NormExponent::INFINITY, line_period)
}

/// Streaming evaluation of `L_e`, `q_e`, `L_s` and `q`.
#[derive(Debug, Clone)]
pub struct PerfWindow {
    spec: PerfSpec,
    max: SlidingMax,
    power: Option<SlidingIntegral>,
    rate: DelayLine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfSample {
    pub l_e: f64,
    pub q_e: f64,
    pub l_s: f64,
    pub q: f64,
    pub warm: bool,
}

impl PerfWindow {
    pub fn new(spec: PerfSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            max: SlidingMax::new(spec.line_period)?,
            power: if spec.p.is_infinite() {
                None
            } else {
                Some(SlidingIntegral::new(spec.line_period)?)
            },
            rate: DelayLine::new(spec.tau_phi)?,
            spec,
        })
    }

    pub fn spec(&self) -> &PerfSpec {
        &self.spec
    }

    /// Records `e_z` at `tau` with `eps` the rate applied up to `tau`.
    pub fn push(&mut self, tau: f64, e_z: f64, eps: f64) -> PerfSample {
        let mag = e_z.abs();
        self.max.push(tau, mag);
        let q_e = self.max.max().unwrap_or(0.0);
        let l_e = match &mut self.power {
            None => q_e,
            Some(int) => {
                let p = self.spec.p.0;
                int.push(tau, mag.powf(p));
                (int.integral() / self.spec.line_period).powf(1.0 / p)
            }
        };
        let l_s = if matches!(self.spec.g_s, RateScore::Zero) {
            0.0
        } else {
            self.rate.push(tau, eps);
            self.rate.delayed().unwrap_or(eps)
        };
        PerfSample {
            l_e,
            q_e,
            l_s,
            q: perf(l_e, l_s, &self.spec),
            warm: self.max.is_warm(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize, span: f64) -> Vec<f64> {
        (0..=n).map(|k| k as f64 * span / n as f64).collect()
    }

    #[test]
    fn constant_signal_norms() {
        let w: Vec<_> = grid(100, 0.01).into_iter().map(|t| (t, -2.5)).collect();
        for p in [1.0, 2.0, 3.5, f64::INFINITY] {
            assert_relative_eq!(line_error_norm(&w, NormExponent(p), 0.01).unwrap(), 2.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn rms_of_sine() {
        let omega = 2.0 * std::f64::consts::PI * 50.0 / 0.01;
        let w: Vec<_> = grid(20_000, 0.01).into_iter().map(|t| (t, 3.0 * (omega * t).sin())).collect();
        let rms = line_error_norm(&w, NormExponent(2.0), 0.01).unwrap();
        assert!((rms - 3.0 / 2f64.sqrt()).abs() < 0.01 * 3.0 / 2f64.sqrt());
    }

    #[test]
    fn max_norm_of_samples() {
        let w = [(0.0, 1.0), (0.005, -3.0), (0.01, 2.0)];
        assert_eq!(line_error_norm(&w, NormExponent::INFINITY, 0.01).unwrap(), 3.0);
        assert_eq!(q_e_moving_max(&w, 0.01).unwrap(), 3.0);
        assert_eq!(line_error_norm(&w[..2], NormExponent::INFINITY, 0.01), Err(Error::ColdWindow("line error")));
    }

    #[test]
    fn perf_values() {
        let spec = PerfSpec::max_error_setpoint(0.01, 6e-3, 4.0);
        assert_eq!(perf(4.0, 0.0, &spec), 0.0);
        assert_eq!(perf(0.0, 0.0, &spec), -16.0);
        assert_eq!(perf(6.0, 0.0, &spec), -4.0);
        assert_eq!(perf(2.0, 0.0, &spec), -4.0);
        assert_eq!(perf(8.0, 0.0, &spec), -16.0);
    }

    #[test]
    fn delayed_rate_interpolates() {
        let samples: Vec<_> = grid(1000, 1.0).into_iter().map(|t| (t, t)).collect();
        let v = delayed_rate(samples.iter().copied(), 0.7 - 6e-3).unwrap();
        assert_relative_eq!(v, 0.7 - 6e-3, max_relative = 1e-14);
        let c: Vec<_> = grid(10, 1.0).into_iter().map(|t| (t, 0.02)).collect();
        assert_eq!(delayed_rate(c.iter().copied(), 0.55).unwrap(), 0.02);
        assert!(delayed_rate(c.iter().copied(), -0.1).is_err());

        let mut line = DelayLine::new(6e-3).unwrap();
        for k in 0..2000 {
            let t = k as f64 * 1e-4;
            line.push(t, t * t);
        }
        let t_end = 1999.0 * 1e-4;
        let at = t_end - 6e-3;
        assert!((line.delayed().unwrap() - at * at).abs() < 1e-8);
    }

    #[test]
    fn delayed_sine_matches_dense_oracle() {
        // coarse history of a sine sampled at dt = 1e-5 in tau, read between grid points
        let w = 210.0;
        let mut line = DelayLine::new(6.3e-3 + 3.7e-6).unwrap();
        let mut t = 0.0;
        while t < 0.05 {
            line.push(t, (w * t).sin());
            t += 1e-5;
        }
        let last = t - 1e-5;
        let at = last - 6.3e-3 - 3.7e-6;
        assert!((line.delayed().unwrap() - (w * at).sin()).abs() < 1e-6);
    }

    #[test]
    fn spike_held_for_one_line() {
        // dyadic spacing keeps the boundary comparison exact
        let dtau = 1.0 / 1024.0;
        let tl = 100.0 * dtau;
        let mut m = SlidingMax::new(tl).unwrap();
        let spike_at = 50;
        let mut held = 0;
        for k in 0..400 {
            let tau = k as f64 * dtau;
            m.push(tau, if k == spike_at { 9.0 } else { 1.0 });
            if m.max() == Some(9.0) {
                held += 1;
            }
        }
        // sample k is in the window while (k - spike) * dtau <= tl
        assert_eq!(held, (tl / dtau).round() as usize + 1);
    }

    #[test]
    fn sliding_integral_tracks_exact_window() {
        let span = 0.03;
        let mut int = SlidingIntegral::new(span).unwrap();
        let f = |t: f64| (40.0 * t).cos() + 2.0;
        let mut tau = 0.0;
        let mut k = 0u64;
        while tau < 0.5 {
            int.push(tau, f(tau));
            k += 1;
            // varying spacing
            tau += 1e-5 * (1.0 + 0.5 * ((k as f64) * 0.01).sin());
        }
        let t_end = int.samples.back().unwrap().0;
        let exact = ((40.0 * t_end).sin() - (40.0 * (t_end - span)).sin()) / 40.0 + 2.0 * span;
        assert!((int.integral() - exact).abs() < 1e-9, "{} vs {exact}", int.integral());
        assert!(int.is_warm());
    }

    #[test]
    fn perf_window_matches_batch_norm() {
        let spec = PerfSpec::max_error_setpoint(0.01, 6e-3, 4.0);
        let mut win = PerfWindow::new(spec).unwrap();
        let mut hist = Vec::new();
        let mut last = None;
        for k in 0..3000 {
            let tau = k as f64 * 1e-5;
            let ez = 5.0 * (300.0 * tau).sin() * (1.0 + tau);
            hist.push((tau, ez));
            last = Some(win.push(tau, ez, 0.02));
        }
        let s = last.unwrap();
        let t_end = hist.last().unwrap().0;
        let window: Vec<_> = hist.iter().copied().filter(|&(t, _)| t >= t_end - 0.01 - 1e-12).collect();
        assert_eq!(s.q_e, q_e_moving_max(&window, 0.01).unwrap());
        assert!(s.warm);
        assert_eq!(s.q, -(s.q_e - 4.0).powi(2));
    }

    proptest! {
        #[test]
        fn norm_is_nondecreasing_in_p(values in proptest::collection::vec(-10.0..10.0f64, 11..60)) {
            let n = values.len() - 1;
            let w: Vec<_> = values.iter().enumerate().map(|(k, &v)| (k as f64 / n as f64, v)).collect();
            let l1 = line_error_norm(&w, NormExponent(1.0), 1.0).unwrap();
            let l2 = line_error_norm(&w, NormExponent(2.0), 1.0).unwrap();
            let linf = line_error_norm(&w, NormExponent::INFINITY, 1.0).unwrap();
            prop_assert!(l1 <= l2 * (1.0 + 1e-12) + 1e-12);
            prop_assert!(l2 <= linf * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn wedge_matches_brute_force(values in proptest::collection::vec(0.0..10.0f64, 1..300), span_steps in 1usize..40) {
            let dtau = 1e-3;
            let span = span_steps as f64 * dtau;
            let mut m = SlidingMax::new(span).unwrap();
            for (k, &v) in values.iter().enumerate() {
                let tau = k as f64 * dtau;
                m.push(tau, v);
                let brute = values[..=k]
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j as f64 * dtau >= tau - span)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(m.max().unwrap(), brute);
            }
        }

        #[test]
        fn larger_sample_never_lowers_the_max(values in proptest::collection::vec(0.0..10.0f64, 1..100), extra in 0.0..20.0f64) {
            let mut m = SlidingMax::new(1.0).unwrap();
            for (k, &v) in values.iter().enumerate() {
                m.push(k as f64 * 1e-3, v);
            }
            let before = m.max().unwrap();
            m.push(values.len() as f64 * 1e-3, extra.max(before));
            prop_assert!(m.max().unwrap() >= before);
        }

        #[test]
        fn replaying_samples_reproduces_outputs(values in proptest::collection::vec(-5.0..5.0f64, 2..200)) {
            let run = || {
                let mut w = PerfWindow::new(PerfSpec { p: NormExponent(2.0), ..PerfSpec::max_error_setpoint(0.02, 0.0, 1.0) }).unwrap();
                values.iter().enumerate().map(|(k, &v)| w.push(k as f64 * 1e-3, v, 1.0).q.to_bits()).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }

    #[test]
    fn quadrature_converges_under_refinement() {
        let norm_at = |dt: f64| {
            let n = (0.01 / dt).round() as usize;
            let w: Vec<_> = (0..=n).map(|k| {
                let t = k as f64 * dt;
                (t, 2.0 + (900.0 * t).sin())
            }).collect();
            line_error_norm(&w, NormExponent(2.0), 0.01).unwrap()
        };
        let a = norm_at(2e-5);
        let b = norm_at(1e-5);
        assert!((a - b).abs() / b < 5e-3);
    }
}
