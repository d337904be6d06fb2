//! Closed-loop AFM model: XY actuators under stabiliser plus internal-model
//! control, Z actuator under integral control, coupled through the sample.
//!
//! Both loops use negative feedback. With `e = p - r` and `e_z = p_z + f(p)`,
//! the XY controllers are driven by `-e` and the Z controller by `-e_z`.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::lti::{polynomial, realize, Companion, FrequencyResponse, Rk4Workspace, StateSpace, TransferFunction, C64};
use crate::topography::Topography;
use crate::trajectory::{ReferenceGenerator, ScanGeometry, ScanPattern};

/// X actuator, amplifier input to sensor output.
pub const GXO_NUM: [f64; 3] = [245.0, -2.73e6, 2.9e10];
pub const GXO_DEN: [f64; 4] = [1.0, 1796.0, 3.39e7, 5.64e10];
/// Y actuator.
pub const GYO_NUM: [f64; 5] = [241.0, -3.18e6, 4.26e10, -9.41e13, 1.13e18];
pub const GYO_DEN: [f64; 6] = [1.0, 2328.0, 6.79e7, 1.45e11, 1.14e15, 2.21e18];
/// Z actuator as fitted. Its denominator has a right-half-plane pair, see
/// [`z_actuator`].
pub const GZO_NUM: [f64; 5] = [64.6, -2.77e5, 5.27e11, -3.41e16, 1.5e21];
pub const GZO_DEN: [f64; 6] = [1.0, 4.52e4, 3.64e9, 1.14e11, 3e18, 3.16e22];

pub const XY_STABILIZER_GAIN: f64 = 667.0;
pub const Z_INTEGRAL_GAIN: f64 = 7.14e3;

/// Regulation errors beyond this (um or nm) mean the loop has gone unstable;
/// a millimetre of error is far outside any physical scan.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub fn x_actuator() -> TransferFunction {
    TransferFunction::new(GXO_NUM.to_vec(), GXO_DEN.to_vec()).expect("valid model")
}

pub fn y_actuator() -> TransferFunction {
    TransferFunction::new(GYO_NUM.to_vec(), GYO_DEN.to_vec()).expect("valid model")
}

pub fn z_actuator_fitted() -> TransferFunction {
    TransferFunction::new(GZO_NUM.to_vec(), GZO_DEN.to_vec()).expect("valid model")
}

/// Z actuator used in simulation: the fitted model with its unstable pole
/// pair reflected into the left half-plane. Magnitude response and DC gain
/// are those of the fit.
pub fn z_actuator() -> TransferFunction {
    z_actuator_fitted()
        .with_mirrored_poles()
        .expect("mirrored model stays proper")
}

/// `S_z(jw) = 1 / (1 + G_zo(jw) k / (jw))`.
pub fn z_sensitivity(gzo: &TransferFunction, gain: f64, omega: f64) -> Result<C64> {
    let g = gzo.freq_response(omega)?;
    let s = C64::new(0.0, omega);
    Ok(C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) + g * gain / s))
}

/// Low-frequency slope of `|S_z(jw)|`: `1 / (k G_zo(0))`.
pub fn sensitivity_slope(gzo: &TransferFunction, gain: f64) -> Result<f64> {
    require_positive("z_gain", gain)?;
    Ok(1.0 / (gain * gzo.dc_gain()?))
}

/// Mode frequency as a multiple of the scan-line, raster-frame and
/// spiral-frame frequencies, scaled by `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyLaw {
    #[serde(default)]
    pub line: f64,
    #[serde(default)]
    pub frame_raster: f64,
    #[serde(default)]
    pub frame_spiral: f64,
}

impl FrequencyLaw {
    pub fn line() -> Self {
        Self {
            line: 1.0,
            ..Self::default()
        }
    }

    pub fn frame_raster() -> Self {
        Self {
            frame_raster: 1.0,
            ..Self::default()
        }
    }

    /// Frequency at `eps = 1`.
    pub fn nominal(&self, g: &ScanGeometry) -> f64 {
        self.line * g.line_freq()
            + self.frame_raster * g.raster_frame_freq()
            + self.frame_spiral * g.spiral_frame_freq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModeNumerator {
    /// `s^2 + 2 zeta w s + w^2`.
    Notch { zeta: f64 },
    /// `(s + multiple * w)^2`.
    DoubleZero { multiple: f64 },
}

/// One factor `num(s) / (s^2 + w^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalMode {
    pub frequency: FrequencyLaw,
    pub numerator: ModeNumerator,
}

impl InternalMode {
    fn polynomials(&self, w: f64) -> ([f64; 3], [f64; 3]) {
        let num = match self.numerator {
            ModeNumerator::Notch { zeta } => [1.0, 2.0 * zeta * w, w * w],
            ModeNumerator::DoubleZero { multiple } => {
                let z = multiple * w;
                [1.0, 2.0 * z, z * z]
            }
        };
        (num, [1.0, 0.0, w * w])
    }
}

/// Stabiliser `g / s` in cascade with internal modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub stabilizer_gain: f64,
    #[serde(default)]
    pub modes: Vec<InternalMode>,
}

impl ControllerSpec {
    pub fn integral(gain: f64) -> Self {
        Self {
            stabilizer_gain: gain,
            modes: Vec::new(),
        }
    }

    /// Sinusoidal raster, fast axis: one critically damped mode at `eps w_l`.
    pub fn raster_x() -> Self {
        Self {
            stabilizer_gain: XY_STABILIZER_GAIN,
            modes: vec![InternalMode {
                frequency: FrequencyLaw::line(),
                numerator: ModeNumerator::Notch { zeta: 1.0 },
            }],
        }
    }

    /// Sinusoidal raster, slow axis: `(s + 500 eps w_fr)^2 / (s^2 + (eps w_fr)^2)`.
    pub fn raster_y() -> Self {
        Self {
            stabilizer_gain: XY_STABILIZER_GAIN,
            modes: vec![InternalMode {
                frequency: FrequencyLaw::frame_raster(),
                numerator: ModeNumerator::DoubleZero { multiple: 500.0 },
            }],
        }
    }

    /// Spiral, either axis: critically damped modes at `eps (w_l +- w_fs)`.
    pub fn spiral() -> Self {
        let mode = |sign: f64| InternalMode {
            frequency: FrequencyLaw {
                line: 1.0,
                frame_spiral: sign,
                ..FrequencyLaw::default()
            },
            numerator: ModeNumerator::Notch { zeta: 1.0 },
        };
        Self {
            stabilizer_gain: XY_STABILIZER_GAIN,
            modes: vec![mode(1.0), mode(-1.0)],
        }
    }

    pub fn order(&self) -> usize {
        1 + 2 * self.modes.len()
    }

    pub fn validate(&self, g: &ScanGeometry) -> Result<()> {
        require_positive("controller.stabilizer_gain", self.stabilizer_gain)?;
        if self.modes.len() > MAX_MODES {
            return Err(Error::InvalidParameter {
                name: "controller.modes",
                value: self.modes.len() as f64,
                reason: "at most three internal modes are supported",
            });
        }
        for m in &self.modes {
            require_positive("controller.mode.frequency", m.frequency.nominal(g))?;
            match m.numerator {
                ModeNumerator::Notch { zeta } => {
                    if !(zeta.is_finite() && zeta >= 0.0) {
                        return Err(Error::InvalidParameter {
                            name: "controller.mode.zeta",
                            value: zeta,
                            reason: "must be finite and nonnegative",
                        });
                    }
                }
                ModeNumerator::DoubleZero { multiple } => {
                    require_positive("controller.mode.multiple", multiple)?;
                }
            }
        }
        Ok(())
    }

    pub fn mode_frequencies(&self, eps: f64, g: &ScanGeometry) -> Vec<f64> {
        self.modes.iter().map(|m| eps * m.frequency.nominal(g)).collect()
    }

    pub fn transfer_function(&self, eps: f64, g: &ScanGeometry) -> Result<TransferFunction> {
        require_positive("eps", eps)?;
        self.validate(g)?;
        let mut block = ControllerBlock::new(self.clone());
        block.refresh(eps, g);
        let (num, den) = block.polynomials();
        TransferFunction::new(num, den)
    }
}

/// Realizes the controller at scan-rate multiplier `eps`.
pub fn build_controller(
    spec: &ControllerSpec,
    eps: f64,
    lines: u32,
    line_period: f64,
) -> Result<StateSpace> {
    let g = ScanGeometry::new(1.0, line_period, lines)?;
    realize(&spec.transfer_function(eps, &g)?)
}

/// Widest companion block in the fused loop. Controllers are limited to
/// three internal modes accordingly.
pub const MAX_BLOCK_ORDER: usize = 8;
const W: usize = MAX_BLOCK_ORDER;
const MAX_MODES: usize = (W - 1) / 2;

/// Controller whose coefficients are re-derived from `eps` every step.
#[derive(Debug, Clone)]
struct ControllerBlock {
    spec: ControllerSpec,
    comp: Companion,
    freqs: Vec<f64>,
    num: [f64; W + 1],
    den: [f64; W + 1],
}

/// In-place product of the first `len` coefficients of `p` with a quadratic.
fn mul_quadratic(p: &mut [f64; W + 1], len: usize, q: [f64; 3]) -> usize {
    for i in (0..len + 2).rev() {
        let mut acc = 0.0;
        for (j, qj) in q.iter().enumerate() {
            if i >= j && i - j < len {
                acc += p[i - j] * qj;
            }
        }
        p[i] = acc;
    }
    len + 2
}

impl ControllerBlock {
    fn new(spec: ControllerSpec) -> Self {
        Self {
            freqs: vec![0.0; spec.modes.len()],
            spec,
            comp: Companion::default(),
            num: [0.0; W + 1],
            den: [0.0; W + 1],
        }
    }

    fn refresh(&mut self, eps: f64, g: &ScanGeometry) {
        self.num[0] = self.spec.stabilizer_gain;
        self.den[0] = 1.0;
        self.den[1] = 0.0;
        let (mut num_len, mut den_len) = (1, 2);
        for (k, mode) in self.spec.modes.iter().enumerate() {
            let w = eps * mode.frequency.nominal(g);
            self.freqs[k] = w;
            let (mn, md) = mode.polynomials(w);
            num_len = mul_quadratic(&mut self.num, num_len, mn);
            den_len = mul_quadratic(&mut self.den, den_len, md);
        }
        self.comp.set(&self.num[..num_len], &self.den[..den_len]);
    }

    fn polynomials(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.spec.order();
        (self.num[..n].to_vec(), self.den[..=n].to_vec())
    }
}

/// Strictly proper companion block placed at `off` in the fused state, with
/// its rows zero-padded to `W` entries.
#[derive(Debug, Clone, Copy)]
struct Block {
    off: usize,
    n: usize,
    out: [f64; W],
    den: [f64; W],
}

impl Block {
    fn new(off: usize, comp: &Companion) -> Self {
        let mut b = Self {
            off,
            n: comp.order(),
            out: [0.0; W],
            den: [0.0; W],
        };
        b.load(comp);
        b
    }

    fn load(&mut self, comp: &Companion) {
        debug_assert_eq!(comp.order(), self.n);
        debug_assert_eq!(comp.feedthrough(), 0.0);
        self.out[..self.n].copy_from_slice(comp.output_weights());
        self.den[..self.n].copy_from_slice(comp.state_weights());
    }

    #[inline(always)]
    fn dot(w: &[f64; W], x: &[f64], off: usize) -> f64 {
        let s: &[f64; W] = x[off..off + W].try_into().expect("padded state");
        let mut acc = 0.0;
        for i in 0..W {
            acc += w[i] * s[i];
        }
        acc
    }

    #[inline(always)]
    fn output(&self, x: &[f64]) -> f64 {
        Self::dot(&self.out, x, self.off)
    }

    /// Writes the last state equation; the others are a shift handled by
    /// the caller.
    #[inline(always)]
    fn close(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        dx[self.off + self.n - 1] = u - Self::dot(&self.den, x, self.off);
    }
}

/// XY controller specs and the Z integral gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub x: ControllerSpec,
    pub y: ControllerSpec,
    pub z_gain: f64,
}

impl PlantConfig {
    pub fn for_pattern(pattern: ScanPattern) -> Self {
        match pattern {
            ScanPattern::Raster | ScanPattern::TriangularRaster => Self {
                x: ControllerSpec::raster_x(),
                y: ControllerSpec::raster_y(),
                z_gain: Z_INTEGRAL_GAIN,
            },
            ScanPattern::Spiral => Self {
                x: ControllerSpec::spiral(),
                y: ControllerSpec::spiral(),
                z_gain: Z_INTEGRAL_GAIN,
            },
        }
    }

    pub fn validate(&self, g: &ScanGeometry) -> Result<()> {
        self.x.validate(g)?;
        self.y.validate(g)?;
        require_positive("z_gain", self.z_gain)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantOutput {
    /// `p - r`, um.
    pub e: [f64; 2],
    /// `p_z + f(p)`, nm.
    pub e_z: f64,
    /// um.
    pub p: [f64; 2],
    /// nm.
    pub p_z: f64,
}

#[derive(Debug, Clone)]
pub struct AfmPlant {
    geometry: ScanGeometry,
    topography: Topography,
    x_act: Block,
    x_ctl: Block,
    y_act: Block,
    y_ctl: Block,
    z_act: Block,
    z_ctl: Block,
    x_law: ControllerBlock,
    y_law: ControllerBlock,
    /// Number of live states; `state` carries `W` trailing zeros so every
    /// block can be read as a full-width row.
    len: usize,
    state: Vec<f64>,
    ws: Rk4Workspace,
    r_prev: [f64; 2],
    steps: u64,
}

impl AfmPlant {
    /// Plant at rest (all states zero) with the reference starting at `r0`.
    pub fn new(
        config: &PlantConfig,
        geometry: ScanGeometry,
        topography: Topography,
        r0: [f64; 2],
    ) -> Result<Self> {
        config.validate(&geometry)?;
        topography.validate()?;
        let companion = |tf: TransferFunction| Companion::new(tf.num(), tf.den());
        let gx = companion(x_actuator());
        let gy = companion(y_actuator());
        let gz = companion(z_actuator());
        let cz = Companion::new(&[config.z_gain], &[1.0, 0.0]);
        let mut x_law = ControllerBlock::new(config.x.clone());
        let mut y_law = ControllerBlock::new(config.y.clone());
        x_law.refresh(1.0, &geometry);
        y_law.refresh(1.0, &geometry);

        let x_act = Block::new(0, &gx);
        let x_ctl = Block::new(x_act.off + x_act.n, &x_law.comp);
        let y_act = Block::new(x_ctl.off + x_ctl.n, &gy);
        let y_ctl = Block::new(y_act.off + y_act.n, &y_law.comp);
        let z_act = Block::new(y_ctl.off + y_ctl.n, &gz);
        let z_ctl = Block::new(z_act.off + z_act.n, &cz);
        let len = z_ctl.off + z_ctl.n;
        Ok(Self {
            geometry,
            topography,
            x_act,
            x_ctl,
            y_act,
            y_ctl,
            z_act,
            z_ctl,
            x_law,
            y_law,
            len,
            state: vec![0.0; len + W],
            ws: Rk4Workspace::new(len + W),
            r_prev: r0,
            steps: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state[..self.len]
    }

    pub fn topography(&self) -> &Topography {
        &self.topography
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Mode frequencies applied on the most recent step, X then Y.
    pub fn mode_frequencies(&self) -> (&[f64], &[f64]) {
        (&self.x_law.freqs, &self.y_law.freqs)
    }

    /// Controller numerator and denominator applied on the most recent step,
    /// X then Y.
    pub fn controller_polynomials(&self) -> [(Vec<f64>, Vec<f64>); 2] {
        [self.x_law.polynomials(), self.y_law.polynomials()]
    }

    /// Current outputs without advancing.
    pub fn output(&self) -> PlantOutput {
        self.outputs_at(self.r_prev)
    }

    fn outputs_at(&self, r: [f64; 2]) -> PlantOutput {
        let x = &self.state;
        let px = self.x_act.output(x);
        let py = self.y_act.output(x);
        let pz = self.z_act.output(x);
        PlantOutput {
            e: [px - r[0], py - r[1]],
            e_z: pz + self.topography.height(px, py),
            p: [px, py],
            p_z: pz,
        }
    }

    /// One RK4 step of the interconnection with controller coefficients
    /// evaluated at `eps`. The reference moves linearly from the previous
    /// step's value to `r` across the step.
    pub fn step(&mut self, r: [f64; 2], eps: f64, dt: f64) -> Result<PlantOutput> {
        require_positive("eps", eps)?;
        require_positive("dt", dt)?;
        let g = self.geometry;
        self.x_law.refresh(eps, &g);
        self.y_law.refresh(eps, &g);
        self.x_ctl.load(&self.x_law.comp);
        self.y_ctl.load(&self.y_law.comp);

        let Self {
            topography,
            x_act,
            x_ctl,
            y_act,
            y_ctl,
            z_act,
            z_ctl,
            len,
            state,
            ws,
            r_prev,
            ..
        } = self;
        let (xa, xc, ya, yc, za, zc, n) = (*x_act, *x_ctl, *y_act, *y_ctl, *z_act, *z_ctl, *len);
        let r0 = *r_prev;
        let dr = [r[0] - r0[0], r[1] - r0[1]];
        ws.step(state, dt, |stage, x, dx| {
            let rx = r0[0] + stage * dr[0];
            let ry = r0[1] + stage * dr[1];
            let px = xa.output(x);
            let py = ya.output(x);
            let pz = za.output(x);
            let ez = pz + topography.height(px, py);
            // companion rows other than the last are pure shifts
            dx[..n - 1].copy_from_slice(&x[1..n]);
            xa.close(x, xc.output(x), dx);
            xc.close(x, rx - px, dx);
            ya.close(x, yc.output(x), dx);
            yc.close(x, ry - py, dx);
            za.close(x, zc.output(x), dx);
            zc.close(x, -ez, dx);
        });
        *r_prev = r;
        self.steps += 1;
        if let Some(i) = self.state[..self.len].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                channel: self.channel_of(i),
                step: Some(self.steps),
            });
        }
        let out = self.outputs_at(r);
        for (channel, value) in [("x error", out.e[0]), ("y error", out.e[1]), ("z error", out.e_z)] {
            if value.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    channel,
                    value,
                    step: Some(self.steps),
                });
            }
        }
        Ok(out)
    }

    fn channel_of(&self, i: usize) -> &'static str {
        if i < self.x_ctl.off {
            "x actuator state"
        } else if i < self.y_act.off {
            "x controller state"
        } else if i < self.y_ctl.off {
            "y actuator state"
        } else if i < self.z_act.off {
            "y controller state"
        } else if i < self.z_ctl.off {
            "z actuator state"
        } else {
            "z controller state"
        }
    }
}

/// Free-function form of [`AfmPlant::step`].
pub fn plant_step(plant: &mut AfmPlant, r: [f64; 2], eps: f64, dt: f64) -> Result<PlantOutput> {
    plant.step(r, eps, dt)
}

/// Closed-loop characteristic polynomial of one XY axis at `eps`.
pub fn xy_characteristic(
    actuator: &TransferFunction,
    controller: &ControllerSpec,
    eps: f64,
    g: &ScanGeometry,
) -> Result<Vec<f64>> {
    Ok(actuator.closed_loop_characteristic(&controller.transfer_function(eps, g)?))
}

/// Largest real part among the closed-loop poles of one XY axis.
pub fn xy_spectral_abscissa(
    actuator: &TransferFunction,
    controller: &ControllerSpec,
    eps: f64,
    g: &ScanGeometry,
) -> Result<f64> {
    let poly = xy_characteristic(actuator, controller, eps, g)?;
    Ok(polynomial::roots(&poly)
        .iter()
        .map(|p| p.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateReport {
    /// Sup of `|e_x|, |e_y|` after the settling period, um.
    pub sup_e: f64,
    /// Sup over tau of `|e_z(tau + T_l) - e_z(tau)|`, nm.
    pub line_drift: f64,
}

/// Runs the loop at fixed `eps` for `settle_lines + horizon_lines` scan
/// lines and reports tracking and line-to-line statistics over the horizon.
#[allow(clippy::too_many_arguments)]
pub fn steady_state_check(
    config: &PlantConfig,
    topography: Topography,
    pattern: ScanPattern,
    geometry: ScanGeometry,
    eps: f64,
    dt: f64,
    settle_lines: f64,
    horizon_lines: f64,
) -> Result<SteadyStateReport> {
    require_positive("eps", eps)?;
    require_positive("dt", dt)?;
    if horizon_lines < 3.0 {
        return Err(Error::InvalidParameter {
            name: "horizon_lines",
            value: horizon_lines,
            reason: "the horizon must span at least three scan lines",
        });
    }
    let mut reference = ReferenceGenerator::new(pattern, geometry)?;
    let mut plant = AfmPlant::new(config, geometry, topography, reference.initial())?;
    let tl = geometry.line_period;
    let dtau = eps * dt;
    let settle_steps = (settle_lines * tl / dtau).ceil() as u64;
    let horizon_steps = (horizon_lines * tl / dtau).ceil() as u64;
    let mut ez = Vec::with_capacity(horizon_steps as usize);
    let mut sup_e = 0.0f64;
    let mut tau = 0.0;
    for k in 1..=settle_steps + horizon_steps {
        tau += dtau;
        let r = reference.advance(eps, dt, tau)?;
        let out = plant.step(r, eps, dt)?;
        if k > settle_steps {
            sup_e = sup_e.max(out.e[0].abs()).max(out.e[1].abs());
            ez.push(out.e_z);
        }
    }
    let lag = tl / dtau;
    let whole = lag.floor() as usize;
    let frac = lag - whole as f64;
    let mut line_drift = 0.0f64;
    for i in 0..ez.len().saturating_sub(whole + 1) {
        let later = ez[i + whole] + frac * (ez[i + whole + 1] - ez[i + whole]);
        line_drift = line_drift.max((later - ez[i]).abs());
    }
    Ok(SteadyStateReport { sup_e, line_drift })
}
