//! Closed-loop scan simulation in real time `t` with the scan distance `tau`
//! advanced by the applied rate every step.

use serde::{Deserialize, Serialize};

use crate::baselines::{oracle_opt_rate, ren_step, OracleSpec, RenLaw, SpanStats, SpanSummary};
use crate::error::{require_positive, Error, Result};
use crate::esloop::{Dithered, EsController, EsParams};
use crate::metric::{PerfSpec, PerfWindow};
use crate::plant::{AfmPlant, PlantConfig, PlantOutput};
use crate::topography::Topography;
use crate::trajectory::{ReferenceGenerator, ScanGeometry, ScanPattern};

/// Everything about a run except the rate law.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSetup {
    pub pattern: ScanPattern,
    pub geometry: ScanGeometry,
    pub scans: u32,
    /// s.
    pub dt: f64,
    pub topography: Topography,
    pub plant: PlantConfig,
    pub perf: PerfSpec,
    /// Ends the run early at this scan distance.
    pub stop_tau: Option<f64>,
}

impl ScanSetup {
    pub fn validate(&self) -> Result<()> {
        require_positive("dt", self.dt)?;
        if self.scans == 0 {
            return Err(Error::InvalidParameter {
                name: "scans",
                value: 0.0,
                reason: "at least one scan is required",
            });
        }
        if let Some(stop) = self.stop_tau {
            require_positive("stop_tau", stop)?;
        }
        self.topography.validate()?;
        self.plant.validate(&self.geometry)?;
        self.perf.validate()
    }

    pub fn scan_length(&self) -> f64 {
        self.geometry.scan_length(self.pattern)
    }

    /// Scan distance of the complete scans.
    pub fn tau_end(&self) -> f64 {
        self.scans as f64 * self.scan_length()
    }

    /// Scan distance at which the run stops.
    pub fn tau_stop(&self) -> f64 {
        self.stop_tau.map_or(self.tau_end(), |s| s.min(self.tau_end()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateLaw {
    Adaptive { params: EsParams, eps_hat0: f64 },
    Fixed { eps: f64 },
    Ren { law: RenLaw, eps0: f64 },
}

impl RateLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Adaptive { params, eps_hat0 } => {
                params.validate()?;
                require_positive("eps_hat0", *eps_hat0)?;
                Ok(())
            }
            Self::Fixed { eps } => require_positive("eps", *eps).map(drop),
            Self::Ren { law, eps0 } => {
                law.params.validate()?;
                require_positive("eps0", *eps0)?;
                Ok(())
            }
        }
    }

    /// Allowed dither-induced rise of the applied rate.
    fn ripple(&self) -> f64 {
        match self {
            Self::Adaptive { params, .. } => 2.0 * params.a,
            _ => 0.0,
        }
    }
}

/// Statistics gathered while the run streams; none of them affects the
/// simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// Line-error set point used for band statistics, nm.
    pub target: f64,
    /// Relative half-width of the set-point band.
    pub band: f64,
    /// Scan distance from which steady-state statistics are collected.
    pub steady_from: f64,
    /// Transient window `[from, until]`, if its error is wanted.
    pub transient: Option<(f64, f64)>,
    /// Start of the monotone-rate check, if wanted.
    pub trend_from: Option<f64>,
    pub oracle: Option<OracleSpec>,
    /// Relative tolerance on `|eps_hat - eps_hat*|` defining convergence.
    pub convergence_tol: f64,
    pub adaptation_span: Option<(f64, f64)>,
    /// Largest tolerated fraction of clamped steps after the gate opens.
    pub clamp_limit: Option<f64>,
}

impl Analysis {
    pub fn new(target: f64, steady_from: f64) -> Self {
        Self {
            target,
            band: 0.25,
            steady_from,
            transient: None,
            trend_from: None,
            oracle: None,
            convergence_tol: 0.1,
            adaptation_span: None,
            clamp_limit: None,
        }
    }
}

/// One simulation step. Row `k` holds the state at `t = k dt` and the rate
/// applied over the step that ended there.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub t: f64,
    pub tau: f64,
    pub eps: f64,
    pub eps_hat: f64,
    pub r: [f64; 2],
    pub p: [f64; 2],
    pub e: [f64; 2],
    pub p_z: f64,
    pub e_z: f64,
    pub q: f64,
    pub q_e: f64,
    pub gate: bool,
    pub clamp: bool,
}

pub trait TraceSink {
    fn push(&mut self, row: &TraceRow) -> Result<()>;

    /// Called once with the final row, which `push` has already seen.
    fn finish(&mut self, _last: &TraceRow) -> Result<()> {
        Ok(())
    }
}

/// Discards every row.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn push(&mut self, _row: &TraceRow) -> Result<()> {
        Ok(())
    }
}

/// Keeps every `every`-th row and the final one.
#[derive(Debug, Clone)]
pub struct MemoryTrace {
    every: u64,
    pub rows: Vec<TraceRow>,
}

impl MemoryTrace {
    pub fn new(every: u64) -> Self {
        Self {
            every: every.max(1),
            rows: Vec::new(),
        }
    }
}

impl TraceSink for MemoryTrace {
    fn push(&mut self, row: &TraceRow) -> Result<()> {
        if row.step % self.every == 0 {
            self.rows.push(*row);
        }
        Ok(())
    }

    fn finish(&mut self, last: &TraceRow) -> Result<()> {
        if self.rows.last().map(|r| r.step) != Some(last.step) {
            self.rows.push(*last);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStats {
    pub from_tau: f64,
    pub samples: u64,
    pub q_e_max: f64,
    pub q_e_min: f64,
    pub q_e_mean: f64,
    /// Fraction of samples with `q_e` inside the set-point band.
    pub in_band: f64,
}

/// Monotonicity of the rate after `from_tau`. A rise is
/// `x(tau2) - min over tau1 <= tau2 of x(tau1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendStats {
    pub from_tau: f64,
    /// Largest rise of the estimate.
    pub estimate_rise: f64,
    /// Largest rise of the applied rate, dither included.
    pub applied_rise: f64,
    pub ripple: f64,
    /// The estimate never rises by more than the dither ripple.
    pub nonincreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    /// s.
    pub duration: f64,
    pub tau_end: f64,
    pub final_eps_hat: f64,
    pub final_eps: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub clamp_events: u64,
    pub clamp_events_after_gate: u64,
    /// First scan distance with the optimiser engaged.
    pub gate_tau: Option<f64>,
    /// Whether `eps_hat` ever changed while the gate was closed.
    pub moved_before_gate: bool,
    /// Last scan distance at which `eps_hat` was outside the tolerance band
    /// around the oracle optimum; zero if it never was.
    pub convergence_tau: Option<f64>,
    pub adaptation_error: Option<SpanSummary>,
    pub steady: Option<SteadyStats>,
    /// Largest `|q_e - target|` in the transient window from the moment `q_e`
    /// first reaches the target there.
    pub transient_error: Option<f64>,
    pub trend: Option<TrendStats>,
}

enum Rate {
    Es(EsController),
    Fixed(f64),
    Ren { law: RenLaw, eps: f64 },
}

impl Rate {
    fn new(law: &RateLaw, line_period: f64) -> Result<Self> {
        Ok(match *law {
            RateLaw::Adaptive { params, eps_hat0 } => Self::Es(EsController::new(params, eps_hat0, line_period)?),
            RateLaw::Fixed { eps } => Self::Fixed(eps),
            RateLaw::Ren { law, eps0 } => Self::Ren {
                law,
                eps: eps0.clamp(law.eps_min, law.eps_max),
            },
        })
    }

    fn applied(&mut self, tau: f64) -> Dithered {
        match self {
            Self::Es(es) => es.applied(tau),
            Self::Fixed(eps) => Dithered {
                eps: *eps,
                clamped: false,
            },
            Self::Ren { law, eps } => Dithered {
                eps: *eps,
                clamped: *eps <= law.eps_min || *eps >= law.eps_max,
            },
        }
    }

    fn estimate(&self) -> f64 {
        match self {
            Self::Es(es) => es.eps_hat(),
            Self::Fixed(eps) | Self::Ren { eps, .. } => *eps,
        }
    }

    fn gate(&self) -> bool {
        match self {
            Self::Es(es) => es.gate_open(),
            _ => false,
        }
    }

    fn update(&mut self, tau: f64, q: f64, dtau: f64, out: &PlantOutput, topo: &Topography, dt: f64) -> Result<()> {
        match self {
            Self::Es(es) => es.update(tau, q, dtau),
            Self::Fixed(_) => Ok(()),
            Self::Ren { law, eps } => {
                let (gx, gy) = topo.gradient(out.p[0], out.p[1]);
                *eps = ren_step(gx.hypot(gy), out.e_z, *eps, law, dt);
                Ok(())
            }
        }
    }
}

struct Collector<'a> {
    analysis: &'a Analysis,
    eps_hat0: f64,
    ripple: f64,
    eps_min: f64,
    eps_max: f64,
    clamps: u64,
    clamps_after_gate: u64,
    steps_after_gate: u64,
    gate_tau: Option<f64>,
    moved_before_gate: bool,
    convergence_tau: f64,
    adaptation: Option<SpanStats>,
    steady: SteadyStats,
    q_e_sum: f64,
    in_band: u64,
    reached: bool,
    transient: Option<f64>,
    trend_min: [f64; 2],
    trend_rise: [f64; 2],
    trend_seen: bool,
}

impl<'a> Collector<'a> {
    fn new(analysis: &'a Analysis, eps_hat0: f64, ripple: f64) -> Result<Self> {
        Ok(Self {
            analysis,
            eps_hat0,
            ripple,
            eps_min: f64::INFINITY,
            eps_max: f64::NEG_INFINITY,
            clamps: 0,
            clamps_after_gate: 0,
            steps_after_gate: 0,
            gate_tau: None,
            moved_before_gate: false,
            convergence_tau: 0.0,
            adaptation: match analysis.adaptation_span {
                Some((a, b)) if analysis.oracle.is_some() => Some(SpanStats::new(a, b)?),
                _ => None,
            },
            steady: SteadyStats {
                from_tau: analysis.steady_from,
                samples: 0,
                q_e_max: f64::NEG_INFINITY,
                q_e_min: f64::INFINITY,
                q_e_mean: 0.0,
                in_band: 0.0,
            },
            q_e_sum: 0.0,
            in_band: 0,
            reached: false,
            transient: None,
            trend_min: [f64::INFINITY; 2],
            trend_rise: [0.0; 2],
            trend_seen: false,
        })
    }

    fn observe(&mut self, row: &TraceRow, warm: bool) {
        let a = self.analysis;
        if row.step > 0 {
            self.eps_min = self.eps_min.min(row.eps);
            self.eps_max = self.eps_max.max(row.eps);
            if row.clamp {
                self.clamps += 1;
            }
        }
        if row.gate {
            self.gate_tau.get_or_insert(row.tau);
            self.steps_after_gate += 1;
            if row.clamp {
                self.clamps_after_gate += 1;
            }
        } else if row.eps_hat != self.eps_hat0 && self.gate_tau.is_none() {
            self.moved_before_gate = true;
        }
        if let Some(oracle) = &a.oracle {
            let opt = oracle_opt_rate(row.tau, oracle);
            if (row.eps_hat - opt).abs() > a.convergence_tol * opt {
                self.convergence_tau = row.tau;
            }
            if let Some(stats) = &mut self.adaptation {
                stats.push(row.tau, (row.eps_hat - opt).abs());
            }
        }
        if warm && row.tau >= a.steady_from {
            let s = &mut self.steady;
            s.samples += 1;
            s.q_e_max = s.q_e_max.max(row.q_e);
            s.q_e_min = s.q_e_min.min(row.q_e);
            self.q_e_sum += row.q_e;
            if (row.q_e - a.target).abs() <= a.band * a.target {
                self.in_band += 1;
            }
        }
        if let Some((from, until)) = a.transient {
            if warm && row.tau >= from && row.tau <= until {
                self.reached |= row.q_e >= a.target;
                if self.reached {
                    let dev = (row.q_e - a.target).abs();
                    self.transient = Some(self.transient.map_or(dev, |m| m.max(dev)));
                }
            }
        }
        if let Some(from) = a.trend_from {
            if row.tau >= from && row.step > 0 {
                self.trend_seen = true;
                for (i, v) in [row.eps_hat, row.eps].into_iter().enumerate() {
                    self.trend_min[i] = self.trend_min[i].min(v);
                    self.trend_rise[i] = self.trend_rise[i].max(v - self.trend_min[i]);
                }
            }
        }
    }

    fn finish(self, last: &TraceRow) -> Result<RunSummary> {
        let a = self.analysis;
        if let Some(limit) = a.clamp_limit {
            if self.steps_after_gate > 0 {
                let fraction = self.clamps_after_gate as f64 / self.steps_after_gate as f64;
                if fraction > limit {
                    return Err(Error::ClampSaturation { fraction, limit });
                }
            }
        }
        let steady = (self.steady.samples > 0).then(|| SteadyStats {
            q_e_mean: self.q_e_sum / self.steady.samples as f64,
            in_band: self.in_band as f64 / self.steady.samples as f64,
            ..self.steady
        });
        let trend = match a.trend_from {
            Some(from) if self.trend_seen => Some(TrendStats {
                from_tau: from,
                estimate_rise: self.trend_rise[0],
                applied_rise: self.trend_rise[1],
                ripple: self.ripple,
                nonincreasing: self.trend_rise[0] <= self.ripple,
            }),
            _ => None,
        };
        Ok(RunSummary {
            steps: last.step,
            duration: last.t,
            tau_end: last.tau,
            final_eps_hat: last.eps_hat,
            final_eps: last.eps,
            eps_min: self.eps_min,
            eps_max: self.eps_max,
            clamp_events: self.clamps,
            clamp_events_after_gate: self.clamps_after_gate,
            gate_tau: self.gate_tau,
            moved_before_gate: self.moved_before_gate,
            convergence_tau: a.oracle.map(|_| self.convergence_tau),
            adaptation_error: self.adaptation.map(|s| s.finish()).transpose()?,
            steady,
            transient_error: self.transient,
            trend,
        })
    }
}

/// Simulates one run, streaming every row to `sink`.
///
/// Per step: applied rate, scan distance, reference, plant, line-error
/// window, then the rate law. The run ends with the first step that reaches
/// `setup.tau_stop()`.
pub fn run_scan(setup: &ScanSetup, law: &RateLaw, analysis: &Analysis, sink: &mut dyn TraceSink) -> Result<RunSummary> {
    setup.validate()?;
    law.validate()?;
    let dt = setup.dt;
    let tau_end = setup.tau_stop();
    let mut reference = ReferenceGenerator::new(setup.pattern, setup.geometry)?;
    let r0 = reference.initial();
    let mut plant = AfmPlant::new(&setup.plant, setup.geometry, setup.topography, r0)?;
    let mut perf = PerfWindow::new(setup.perf)?;
    let mut rate = Rate::new(law, setup.geometry.line_period)?;
    let mut collect = Collector::new(analysis, rate.estimate(), law.ripple())?;

    let out = plant.output();
    let first = rate.applied(0.0);
    let sample = perf.push(0.0, out.e_z, first.eps);
    rate.update(0.0, sample.q, first.eps * dt, &out, &setup.topography, dt)?;
    let mut row = TraceRow {
        step: 0,
        t: 0.0,
        tau: 0.0,
        eps: first.eps,
        eps_hat: rate.estimate(),
        r: r0,
        p: out.p,
        e: out.e,
        p_z: out.p_z,
        e_z: out.e_z,
        q: sample.q,
        q_e: sample.q_e,
        gate: rate.gate(),
        clamp: first.clamped,
    };
    collect.observe(&row, sample.warm);
    sink.push(&row)?;

    let mut tau = 0.0;
    let mut step = 0u64;
    while tau < tau_end {
        let applied = rate.applied(tau);
        let eps = applied.eps;
        step += 1;
        tau += eps * dt;
        let r = reference.advance(eps, dt, tau).map_err(|e| e.at_step(step))?;
        let out = plant.step(r, eps, dt).map_err(|e| e.at_step(step))?;
        let sample = perf.push(tau, out.e_z, eps);
        rate.update(tau, sample.q, eps * dt, &out, &setup.topography, dt)
            .map_err(|e| e.at_step(step))?;
        row = TraceRow {
            step,
            t: step as f64 * dt,
            tau,
            eps,
            eps_hat: rate.estimate(),
            r,
            p: out.p,
            e: out.e,
            p_z: out.p_z,
            e_z: out.e_z,
            q: sample.q,
            q_e: sample.q_e,
            gate: rate.gate(),
            clamp: applied.clamped,
        };
        collect.observe(&row, sample.warm);
        sink.push(&row)?;
    }
    sink.finish(&row)?;
    collect.finish(&row)
}
