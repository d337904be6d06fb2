//! Scenario files: TOML text in, a validated simulation setup out.

use std::fmt;
use std::path::Path;

use adaptscan_core::baselines::{fixed_rate_for_duration, OracleSpec, RenLaw, RenParams};
use adaptscan_core::esloop::{EsParams, DEFAULT_EPS_MAX, DEFAULT_EPS_MIN};
use adaptscan_core::metric::{ErrorScore, NormExponent, PerfSpec, RateScore};
use adaptscan_core::plant::PlantConfig;
use adaptscan_core::sim::{Analysis, RateLaw, ScanSetup};
use adaptscan_core::topography::Topography;
use adaptscan_core::trajectory::{ScanGeometry, ScanPattern};
use serde::{Deserialize, Serialize};

/// A configuration problem, located as precisely as the source allows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, e.g. `method.eps_hat0`; empty for syntax errors.
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }

    fn located(mut self, source: Option<&str>) -> Self {
        if self.line.is_none() {
            self.line = source.and_then(|s| locate(s, &self.field));
        }
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of `field` (`table.key` or `key`) in TOML `source`.
///
/// Best effort: handles `[table]` headers and `key = value` lines, which is
/// all the scenario files use.
pub fn locate(source: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", field),
    };
    let mut current = String::new();
    let mut table_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim_matches(['[', ']']).trim().to_string();
            if current == table {
                table_line = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    // A missing key is best reported at its table header.
    table_line.or_else(|| (table.is_empty() && key.is_empty()).then_some(1))
}

/// 1-based line containing byte `offset`.
pub(crate) fn line_of(source: &str, offset: usize) -> usize {
    source.as_bytes()[..offset.min(source.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

fn default_scans() -> u32 {
    1
}

fn default_dt() -> f64 {
    1e-5
}

fn default_p() -> NormExponent {
    NormExponent::INFINITY
}

fn default_eps_min() -> f64 {
    DEFAULT_EPS_MIN
}

fn default_eps_max() -> f64 {
    DEFAULT_EPS_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub pattern: ScanPattern,
    /// Scan size `L` (um).
    pub size: f64,
    /// Nominal line period `T_l` (s).
    pub line_period: f64,
    pub lines: u32,
    #[serde(default = "default_scans")]
    pub scans: u32,
    /// Integration step (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Ends the run early at this scan distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tau: Option<f64>,
    pub topography: Topography,
    /// Controller set; defaults to the pattern's standard set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantConfig>,
    pub metric: MetricConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default = "default_p")]
    pub p: NormExponent,
    /// Error set point (nm).
    pub e_z_star: f64,
    /// Delay between the rate and error channels, in scan distance.
    pub tau_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    Adaptive {
        a: f64,
        omega: f64,
        delta: f64,
        eps_hat0: f64,
        #[serde(default = "default_eps_min")]
        eps_min: f64,
        #[serde(default = "default_eps_max")]
        eps_max: f64,
        /// Largest tolerated fraction of clamped steps after the gate opens.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clamp_limit: Option<f64>,
    },
    /// Exactly one of `eps` and `duration` (s).
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<f64>,
        #[serde(default = "default_eps_min")]
        eps_min: f64,
        #[serde(default = "default_eps_max")]
        eps_max: f64,
    },
    Ren {
        kappa: f64,
        grad_star: f64,
        d_star: f64,
        x_dot_star: f64,
        /// Defaults to the reference rate implied by `x_dot_star`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps0: Option<f64>,
        #[serde(default = "default_eps_min")]
        eps_min: f64,
        #[serde(default = "default_eps_max")]
        eps_max: f64,
    },
}

impl MethodConfig {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Adaptive { .. } => "adaptive",
            Self::Fixed { .. } => "fixed",
            Self::Ren { .. } => "ren",
        }
    }
}

/// Windows for the run summary, all in scan distance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Start of the steady-state statistics; defaults to the second scan, or
    /// half-way through a single scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend_from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    /// Defaults to the second scan when an oracle exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation_span: Option<[f64; 2]>,
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub method: &'static str,
    pub setup: ScanSetup,
    pub law: RateLaw,
    pub analysis: Analysis,
}

fn positive(field: &str, value: f64) -> Result<f64, ConfigError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ConfigError::new(field, format!("must be finite and positive, got {value}")))
    }
}

fn nonnegative(field: &str, value: f64) -> Result<f64, ConfigError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ConfigError::new(field, format!("must be finite and non-negative, got {value}")))
    }
}

fn bounds(table: &str, eps_min: f64, eps_max: f64) -> Result<(), ConfigError> {
    positive(&format!("{table}.eps_min"), eps_min)?;
    positive(&format!("{table}.eps_max"), eps_max)?;
    if eps_min >= eps_max {
        return Err(ConfigError::new(
            format!("{table}.eps_max"),
            format!("must exceed eps_min ({eps_min}), got {eps_max}"),
        ));
    }
    Ok(())
}

fn span(field: &str, s: [f64; 2]) -> Result<(f64, f64), ConfigError> {
    nonnegative(field, s[0])?;
    if !(s[1].is_finite() && s[1] > s[0]) {
        return Err(ConfigError::new(field, format!("needs start < end, got [{}, {}]", s[0], s[1])));
    }
    Ok((s[0], s[1]))
}

fn core(field: &str, err: adaptscan_core::Error) -> ConfigError {
    ConfigError::new(field, err.to_string())
}

impl ScenarioConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of(source, s.start));
            ConfigError {
                field: String::new(),
                line,
                message: e.message().trim().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn geometry(&self) -> Result<ScanGeometry, ConfigError> {
        positive("size", self.size)?;
        positive("line_period", self.line_period)?;
        if self.lines < 2 {
            return Err(ConfigError::new("lines", format!("needs at least 2 scan lines, got {}", self.lines)));
        }
        ScanGeometry::new(self.size, self.line_period, self.lines).map_err(|e| core("lines", e))
    }

    /// Validates every field and assembles the simulation inputs.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let g = self.geometry()?;
        if self.scans == 0 {
            return Err(ConfigError::new("scans", "needs at least one scan"));
        }
        positive("dt", self.dt)?;
        if let Some(stop) = self.stop_tau {
            positive("stop_tau", stop)?;
        }
        self.topography.validate().map_err(|e| core("topography", e))?;
        let plant = self.plant.clone().unwrap_or_else(|| PlantConfig::for_pattern(self.pattern));
        plant.validate(&g).map_err(|e| core("plant", e))?;

        let m = &self.metric;
        m.p.validate().map_err(|e| core("metric.p", e))?;
        positive("metric.e_z_star", m.e_z_star)?;
        nonnegative("metric.tau_phi", m.tau_phi)?;
        if m.tau_phi > self.line_period {
            return Err(ConfigError::new("metric.tau_phi", "must not exceed line_period"));
        }
        let perf = PerfSpec {
            p: m.p,
            line_period: self.line_period,
            tau_phi: m.tau_phi,
            g_e: ErrorScore::SquaredDeviation { target: m.e_z_star },
            g_s: RateScore::Zero,
        };
        let setup = ScanSetup {
            pattern: self.pattern,
            geometry: g,
            scans: self.scans,
            dt: self.dt,
            topography: self.topography,
            plant,
            perf,
            stop_tau: self.stop_tau,
        };
        setup.validate().map_err(|e| core("", e))?;

        let (law, clamp_limit) = self.rate_law(&setup)?;
        law.validate().map_err(|e| core("method", e))?;
        let analysis = self.analysis(&setup, clamp_limit)?;
        Ok(Scenario {
            name: self.name.clone(),
            method: self.method.label(),
            setup,
            law,
            analysis,
        })
    }

    fn rate_law(&self, setup: &ScanSetup) -> Result<(RateLaw, Option<f64>), ConfigError> {
        Ok(match self.method {
            MethodConfig::Adaptive {
                a,
                omega,
                delta,
                eps_hat0,
                eps_min,
                eps_max,
                clamp_limit,
            } => {
                positive("method.a", a)?;
                positive("method.omega", omega)?;
                positive("method.delta", delta)?;
                bounds("method", eps_min, eps_max)?;
                if !(eps_hat0 > eps_min && eps_hat0 < eps_max) {
                    return Err(ConfigError::new(
                        "method.eps_hat0",
                        format!("must lie inside ({eps_min}, {eps_max}), got {eps_hat0}"),
                    ));
                }
                if let Some(limit) = clamp_limit {
                    nonnegative("method.clamp_limit", limit)?;
                }
                let params = EsParams {
                    a,
                    omega,
                    delta,
                    tau_phi: self.metric.tau_phi,
                    eps_min,
                    eps_max,
                };
                params.validate().map_err(|e| core("method", e))?;
                (RateLaw::Adaptive { params, eps_hat0 }, clamp_limit)
            }
            MethodConfig::Fixed {
                eps,
                duration,
                eps_min,
                eps_max,
            } => {
                bounds("method", eps_min, eps_max)?;
                let eps = match (eps, duration) {
                    (Some(eps), None) => positive("method.eps", eps)?,
                    (None, Some(d)) => fixed_rate_for_duration(setup, positive("method.duration", d)?, eps_min, eps_max)
                        .map_err(|e| core("method.duration", e))?,
                    _ => return Err(ConfigError::new("method", "set exactly one of `eps` and `duration`")),
                };
                (RateLaw::Fixed { eps }, None)
            }
            MethodConfig::Ren {
                kappa,
                grad_star,
                d_star,
                x_dot_star,
                eps0,
                eps_min,
                eps_max,
            } => {
                positive("method.kappa", kappa)?;
                positive("method.grad_star", grad_star)?;
                positive("method.d_star", d_star)?;
                positive("method.x_dot_star", x_dot_star)?;
                bounds("method", eps_min, eps_max)?;
                let params = RenParams {
                    kappa,
                    grad_star,
                    d_star,
                    x_dot_star,
                };
                let law = RenLaw::new(params, &setup.geometry, eps_min, eps_max).map_err(|e| core("method", e))?;
                let eps0 = match eps0 {
                    Some(e) => positive("method.eps0", e)?,
                    None => law.eps_ref,
                };
                (RateLaw::Ren { law, eps0 }, None)
            }
        })
    }

    fn analysis(&self, setup: &ScanSetup, clamp_limit: Option<f64>) -> Result<Analysis, ConfigError> {
        let a = &self.analysis;
        let s = setup.scan_length();
        let default_steady = if self.scans >= 2 { s } else { 0.5 * s };
        let steady_from = nonnegative("analysis.steady_from", a.steady_from.unwrap_or(default_steady))?;
        let mut out = Analysis::new(self.metric.e_z_star, steady_from);
        if let Some(band) = a.band {
            out.band = positive("analysis.band", band)?;
        }
        if let Some(tol) = a.convergence_tol {
            out.convergence_tol = positive("analysis.convergence_tol", tol)?;
        }
        out.transient = a.transient.map(|t| span("analysis.transient", t)).transpose()?;
        out.trend_from = a.trend_from.map(|t| nonnegative("analysis.trend_from", t)).transpose()?;
        out.clamp_limit = clamp_limit;
        out.oracle = OracleSpec::for_scan(
            self.pattern,
            &setup.geometry,
            &setup.topography,
            &setup.plant,
            self.metric.e_z_star,
        )
        .map_err(|e| core("plant", e))?;
        out.adaptation_span = match a.adaptation_span {
            Some(sp) => Some(span("analysis.adaptation_span", sp)?),
            // the default span is dropped when the run stops before it ends
            None if out.oracle.is_some() && self.scans >= 2 && 2.0 * s <= setup.tau_stop() => Some((s, 2.0 * s)),
            None => None,
        };
        Ok(out)
    }
}

/// Parses and validates `source`; every error carries a line when possible.
pub fn parse_scenario(source: &str) -> Result<(ScenarioConfig, Scenario), ConfigError> {
    let cfg = ScenarioConfig::from_toml(source)?;
    let scenario = cfg.build().map_err(|e| e.located(Some(source)))?;
    Ok((cfg, scenario))
}

pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, Scenario), ConfigError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&source)
}
