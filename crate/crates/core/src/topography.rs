//! Static sample height maps. Lateral coordinates in um, heights in nm.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Edge steepness whose 10-90 % rise spans `fraction` of `period`.
///
/// A logistic edge rises from 10 % to 90 % over `ln(81) / k`.
pub fn steepness_for_rise(period: f64, fraction: f64) -> f64 {
    81f64.ln() / (fraction * period)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topography {
    Flat {
        #[serde(default)]
        height: f64,
    },
    /// `f = -(coupling * y + slope) * x`.
    TiltedBentPlane {
        #[serde(default = "default_coupling")]
        coupling: f64,
        #[serde(default = "default_slope")]
        slope: f64,
    },
    /// Line grating along x: plateaus of height `height` and width
    /// `duty * period`, one of them centred on `x = 0`, joined by logistic
    /// edges of steepness `steepness` (1/um).
    SigmoidGrating {
        height: f64,
        period: f64,
        steepness: f64,
        duty: f64,
    },
}

fn default_coupling() -> f64 {
    15.0
}

fn default_slope() -> f64 {
    70.0
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Topography {
    pub fn bent_plane() -> Self {
        Self::TiltedBentPlane {
            coupling: default_coupling(),
            slope: default_slope(),
        }
    }

    /// 20 nm grating, 3 um pitch, 50 % duty, edges rising over 2 % of the pitch.
    pub fn grating() -> Self {
        let period = 3.0;
        Self::SigmoidGrating {
            height: 20.0,
            period,
            steepness: steepness_for_rise(period, 0.02),
            duty: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be finite",
                })
            }
        };
        match *self {
            Self::Flat { height } => finite("topography.height", height),
            Self::TiltedBentPlane { coupling, slope } => {
                finite("topography.coupling", coupling)?;
                finite("topography.slope", slope)
            }
            Self::SigmoidGrating {
                height,
                period,
                steepness,
                duty,
            } => {
                finite("topography.height", height)?;
                require_positive("topography.period", period)?;
                require_positive("topography.steepness", steepness)?;
                if !(duty > 0.0 && duty < 1.0) {
                    return Err(Error::InvalidParameter {
                        name: "topography.duty",
                        value: duty,
                        reason: "must lie strictly between 0 and 1",
                    });
                }
                Ok(())
            }
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Flat { height } => height,
            Self::TiltedBentPlane { coupling, slope } => -(coupling * y + slope) * x,
            Self::SigmoidGrating {
                height,
                period,
                steepness,
                duty,
            } => {
                let (u, w) = grating_phase(x, period, duty);
                height * (sigmoid(steepness * (u + w)) - sigmoid(steepness * (u - w)))
            }
        }
    }

    /// `(df/dx, df/dy)` in nm/um.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Self::Flat { .. } => (0.0, 0.0),
            Self::TiltedBentPlane { coupling, slope } => (-(coupling * y + slope), -coupling * x),
            Self::SigmoidGrating {
                height,
                period,
                steepness,
                duty,
            } => {
                let (u, w) = grating_phase(x, period, duty);
                let d = |z: f64| {
                    let s = sigmoid(z);
                    s * (1.0 - s)
                };
                (height * steepness * (d(steepness * (u + w)) - d(steepness * (u - w))), 0.0)
            }
        }
    }
}

/// Offset from the nearest plateau centre and the plateau half-width.
///
/// Only the nearest plateau is evaluated; at the wrap point both of its edges
/// are at least `min(duty, 1 - duty) * period / 2` away, so the neglected
/// neighbours contribute below `height * exp(-steepness * that distance)`.
fn grating_phase(x: f64, period: f64, duty: f64) -> (f64, f64) {
    (x - period * (x / period).round(), duty * period / 2.0)
}
