use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("improper transfer function: numerator degree {num_degree} exceeds denominator degree {den_degree}")]
    ImproperTransferFunction { num_degree: usize, den_degree: usize },

    #[error("degenerate denominator: leading coefficient is zero or the polynomial is empty")]
    DegenerateDenominator,

    #[error("non-finite coefficient in {0}")]
    NonFiniteCoefficient(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pole on the imaginary axis at omega = {omega} rad/s (jwI - A is singular)")]
    PoleOnImaginaryAxis { omega: f64 },

    #[error("non-finite {channel}{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { channel: &'static str, step: Option<u64> },

    #[error("{channel} diverged (|value| = {value:e}){}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Diverged {
        channel: &'static str,
        value: f64,
        step: Option<u64>,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("window `{0}` is not warmed up")]
    ColdWindow(&'static str),

    #[error("history does not reach back to tau = {tau}")]
    InsufficientHistory { tau: f64 },

    #[error("trace does not cover tau span [{start}, {end}]")]
    SpanNotCovered { start: f64, end: f64 },

    #[error("required scan rate {eps} lies outside clamp bounds [{min}, {max}]")]
    RateOutOfBounds { eps: f64, min: f64, max: f64 },

    #[error("scan-rate clamp saturated on {fraction:.3} of post-warm-up steps (limit {limit:.3})")]
    ClampSaturation { fraction: f64, limit: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("trace output failed: {0}")]
    Sink(String),
}

impl Error {
    /// Attach a step index to a `NonFinite` or `Diverged` error raised below
    /// the driver.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            Error::NonFinite { channel, .. } => Error::NonFinite {
                channel,
                step: Some(step),
            },
            Error::Diverged { channel, value, .. } => Error::Diverged {
                channel,
                value,
                step: Some(step),
            },
            other => other,
        }
    }
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}
