//! The numerical substructure: a single-storey braced frame reduced to one
//! lateral degree of freedom, integrated with Newmark's method.
//!
//! Units: mass in t, stiffness in kN/mm, displacement in mm, force in kN,
//! time in s. Internally the mass is used in kN·s²/mm (`t / 1000`).
//!
//! Equation of motion for storey displacement `u`:
//!
//! ```text
//! M·ü + C·u̇ + K_e·u + cosθ·R(u·cosθ) = −M·a_g
//! ```
//!
//! with `C = 2ζω·M` (mass-proportional, `ω` from the initial stiffness) and
//! `R` supplied by a [`BraceProvider`].

mod history;
mod motion;

use std::f64::consts::TAU;

use thiserror::Error;

use crate::provider::{BraceProvider, ProviderError};

pub use history::{compare_runs, ComparisonReport, ResponseHistory, CSV_HEADER};
pub use motion::{
    load_ground_motion, parse_csv2col, parse_peer_at2, AccelUnit, GroundMotion, MotionFormat,
    SyntheticMotion, G_MM_S2,
};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("invalid frame: {0}")]
    InvalidModel(String),
    #[error("explicit step {dt_sub} s exceeds the stability limit T/20 = {limit} s")]
    StabilityViolation { dt_sub: f64, limit: f64 },
    #[error("Newton iteration failed at t = {time} s (residual {residual:e} kN)")]
    Divergence { time: f64, residual: f64 },
    #[error("brace provider fault: {0}")]
    ProviderFault(#[from] ProviderError),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("unknown units: {0}")]
    UnknownUnits(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("time stamps differ at sample {0}")]
    SamplingMismatch(usize),
    #[error("metric error: {0}")]
    Metric(String),
}

/// Single-storey, single-bay braced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameModel {
    /// Storey mass, t.
    pub mass: f64,
    /// Lateral stiffness of the elastic beam/column system, kN/mm.
    pub frame_stiffness: f64,
    pub damping_ratio: f64,
    /// mm
    pub storey_height: f64,
    /// mm
    pub bay_width: f64,
    /// Nominal initial axial stiffness of the brace, kN/mm. Used for the
    /// period, damping, stability limit and the implicit iteration matrix.
    pub brace_stiffness: f64,
}

impl FrameModel {
    /// Frame with the mass chosen so that the fundamental period equals
    /// `period`.
    pub fn calibrated(
        period: f64,
        frame_stiffness: f64,
        damping_ratio: f64,
        storey_height: f64,
        bay_width: f64,
        brace_stiffness: f64,
    ) -> Result<Self, FrameError> {
        let mut f = Self {
            mass: 1.0,
            frame_stiffness,
            damping_ratio,
            storey_height,
            bay_width,
            brace_stiffness,
        };
        f.validate()?;
        if !(period > 0.0) {
            return Err(FrameError::InvalidModel(format!("period = {period}")));
        }
        let omega = TAU / period;
        f.mass = 1000.0 * f.lateral_stiffness() / (omega * omega);
        Ok(f)
    }

    /// The default geometry, frame stiffness and damping, calibrated to the
    /// default period for a brace of initial stiffness `brace_stiffness`.
    pub fn with_defaults(brace_stiffness: f64) -> Result<Self, FrameError> {
        Self::calibrated(
            defaults::PERIOD,
            defaults::FRAME_STIFFNESS,
            defaults::DAMPING_RATIO,
            defaults::STOREY_HEIGHT,
            defaults::BAY_WIDTH,
            brace_stiffness,
        )
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let bad = |m: String| Err(FrameError::InvalidModel(m));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.mass) {
            return bad(format!("mass = {}", self.mass));
        }
        if !(self.frame_stiffness >= 0.0 && self.frame_stiffness.is_finite()) {
            return bad(format!("frame stiffness = {}", self.frame_stiffness));
        }
        if !(0.0..1.0).contains(&self.damping_ratio) {
            return bad(format!("damping ratio = {}", self.damping_ratio));
        }
        if !pos(self.storey_height) || !pos(self.bay_width) {
            return bad("storey height and bay width must be positive".into());
        }
        if !(self.brace_stiffness >= 0.0 && self.brace_stiffness.is_finite()) {
            return bad(format!("brace stiffness = {}", self.brace_stiffness));
        }
        if self.lateral_stiffness() <= 0.0 {
            return bad("zero lateral stiffness".into());
        }
        Ok(())
    }

    /// Brace inclination from the horizontal, rad.
    pub fn brace_angle(&self) -> f64 {
        self.storey_height.atan2(self.bay_width)
    }

    pub fn cos_theta(&self) -> f64 {
        self.bay_width / self.brace_length()
    }

    /// mm
    pub fn brace_length(&self) -> f64 {
        self.storey_height.hypot(self.bay_width)
    }

    /// `K_e + k_brace·cos²θ`, kN/mm.
    pub fn lateral_stiffness(&self) -> f64 {
        let c = self.cos_theta();
        self.frame_stiffness + self.brace_stiffness * c * c
    }

    /// Mass in kN·s²/mm.
    fn mass_internal(&self) -> f64 {
        self.mass / 1000.0
    }

    pub fn circular_frequency(&self) -> f64 {
        (self.lateral_stiffness() / self.mass_internal()).sqrt()
    }

    /// Fundamental period with the brace at its initial stiffness, s.
    pub fn natural_period(&self) -> f64 {
        TAU / self.circular_frequency()
    }

    /// Viscous damping coefficient, kN·s/mm.
    pub fn damping_coefficient(&self) -> f64 {
        2.0 * self.damping_ratio * self.circular_frequency() * self.mass_internal()
    }
}

/// Period `2π·sqrt(M/(K_e + k_brace·cos²θ))` for an arbitrary brace stiffness.
pub fn natural_period(frame: &FrameModel, brace_initial_stiffness: f64) -> f64 {
    FrameModel {
        brace_stiffness: brace_initial_stiffness,
        ..frame.clone()
    }
    .natural_period()
}

/// Default prototype geometry and stiffness.
pub mod defaults {
    pub const PERIOD: f64 = 0.492;
    pub const STOREY_HEIGHT: f64 = 4000.0;
    pub const BAY_WIDTH: f64 = 6000.0;
    pub const FRAME_STIFFNESS: f64 = 5.0;
    pub const DAMPING_RATIO: f64 = 0.02;
    pub const SUBSTEPS: usize = 10;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// γ = ½, β = 0; one displacement→force exchange per step.
    Explicit,
    /// γ = ½, β = ¼ with modified-Newton iterations on trial states.
    AverageAcceleration,
}

impl std::str::FromStr for Scheme {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(Self::Explicit),
            "average-acceleration" | "implicit" => Ok(Self::AverageAcceleration),
            other => Err(FrameError::InvalidModel(format!("unknown scheme `{other}`"))),
        }
    }
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Explicit => "explicit",
            Self::AverageAcceleration => "average-acceleration",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOptions {
    pub scheme: Scheme,
    /// Integration steps per ground-motion interval.
    pub substeps: usize,
    /// Record every `output_stride` integration steps (0 = once per record sample).
    pub output_stride: usize,
    /// Newton tolerance on the equation-of-motion residual, kN.
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    /// Initial displacement, mm.
    pub u0: f64,
    /// Initial velocity, mm/s.
    pub v0: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Explicit,
            substeps: defaults::SUBSTEPS,
            output_stride: 0,
            newton_tol: 1e-8,
            max_newton_iterations: 100,
            u0: 0.0,
            v0: 0.0,
        }
    }
}

/// A failed run with whatever was recorded before the failure.
#[derive(Debug)]
pub struct SimulationFailure {
    pub error: FrameError,
    pub partial: ResponseHistory,
}

impl std::fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded samples)", self.error, self.partial.len())
    }
}

impl std::error::Error for SimulationFailure {}

impl From<FrameError> for SimulationFailure {
    fn from(error: FrameError) -> Self {
        Self {
            error,
            partial: ResponseHistory::default(),
        }
    }
}

struct Recorder<'a> {
    frame: &'a FrameModel,
    h: ResponseHistory,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, u: f64, v: f64, a: f64, r: f64, ag: f64) {
        let h = &mut self.h;
        h.t.push(t);
        h.u.push(u);
        h.v.push(v);
        h.a.push(a);
        h.x_brace.push(u * self.frame.cos_theta());
        h.r_brace.push(r);
        h.drift.push(u / self.frame.storey_height);
        h.ag.push(ag);
    }
}

/// Nonlinear response history of `frame` under `motion`, with the brace force
/// supplied by `brace`.
pub fn newmark_nlrha<P: BraceProvider + ?Sized>(
    frame: &FrameModel,
    motion: &GroundMotion,
    brace: &mut P,
    opts: &IntegrationOptions,
) -> Result<ResponseHistory, SimulationFailure> {
    frame.validate()?;
    if opts.substeps == 0 {
        return Err(FrameError::InvalidModel("substeps must be ≥ 1".into()).into());
    }
    let dt = motion.dt() / opts.substeps as f64;
    let period = frame.natural_period();
    if opts.scheme == Scheme::Explicit && dt > period / 20.0 {
        return Err(FrameError::StabilityViolation {
            dt_sub: dt,
            limit: period / 20.0,
        }
        .into());
    }
    let stride = if opts.output_stride == 0 {
        opts.substeps
    } else {
        opts.output_stride
    };

    let m = frame.mass_internal();
    let c = frame.damping_coefficient();
    let ke = frame.frame_stiffness;
    let cos = frame.cos_theta();
    let load = |ag: f64| -m * ag;

    let mut rec = Recorder {
        frame,
        h: ResponseHistory::default(),
    };
    let fail = |error: FrameError, rec: Recorder| SimulationFailure {
        error,
        partial: rec.h,
    };

    let mut u = opts.u0;
    let mut v = opts.v0;
    let ag0 = motion.interpolated(0, 0, opts.substeps);
    let mut r = match brace.init(u * cos) {
        Ok(r) => r,
        Err(e) => return Err(fail(e.into(), rec)),
    };
    let mut a = (load(ag0) - c * v - ke * u - cos * r) / m;
    rec.push(0.0, u, v, a, r, ag0);

    let total = (motion.len() - 1) * opts.substeps;
    // Modified-Newton iteration matrix for the implicit scheme.
    let k_hat = 4.0 * m / (dt * dt) + 2.0 * c / dt + ke + frame.brace_stiffness * cos * cos;

    for n in 1..=total {
        let t = n as f64 * dt;
        let ag = motion.interpolated(n / opts.substeps, n % opts.substeps, opts.substeps);
        let p = load(ag);
        match opts.scheme {
            Scheme::Explicit => {
                let u1 = u + dt * v + 0.5 * dt * dt * a;
                let r1 = match brace.step(u1 * cos) {
                    Ok(r) => r,
                    Err(e) => return Err(fail(e.into(), rec)),
                };
                let a1 = (p - ke * u1 - cos * r1 - c * (v + 0.5 * dt * a)) / (m + 0.5 * dt * c);
                v += 0.5 * dt * (a + a1);
                u = u1;
                a = a1;
                r = r1;
            }
            Scheme::AverageAcceleration => {
                if let Err(e) = brace.snapshot() {
                    return Err(fail(e.into(), rec));
                }
                // Iterating on the increment keeps 4m/dt²·Δu free of the
                // round-off carried by the total displacement.
                let mut du = dt * v + 0.25 * dt * dt * a;
                let mut converged = None;
                let mut residual = f64::INFINITY;
                for iter in 0..opts.max_newton_iterations {
                    if iter > 0 {
                        if let Err(e) = brace.restore() {
                            return Err(fail(e.into(), rec));
                        }
                    }
                    let u1 = u + du;
                    let r1 = match brace.step(u1 * cos) {
                        Ok(r) => r,
                        Err(e) => return Err(fail(e.into(), rec)),
                    };
                    let a1 = 4.0 / (dt * dt) * du - 4.0 / dt * v - a;
                    let v1 = 2.0 / dt * du - v;
                    residual = p - m * a1 - c * v1 - ke * u1 - cos * r1;
                    if !residual.is_finite() {
                        break;
                    }
                    if residual.abs() <= opts.newton_tol {
                        converged = Some((u1, v1, a1, r1));
                        break;
                    }
                    du += residual / k_hat;
                }
                match converged {
                    Some((u1, v1, a1, r1)) => {
                        u = u1;
                        v = v1;
                        a = a1;
                        r = r1;
                    }
                    None => return Err(fail(FrameError::Divergence { time: t, residual }, rec)),
                }
            }
        }
        if !(u.is_finite() && v.is_finite() && a.is_finite()) {
            return Err(fail(
                FrameError::Divergence {
                    time: t,
                    residual: f64::NAN,
                },
                rec,
            ));
        }
        if n % stride == 0 || n == total {
            rec.push(t, u, v, a, r, ag);
        }
    }
    Ok(rec.h)
}

/// `M·ü + C·u̇ + K_e·u + cosθ·R + M·a_g` at every recorded sample, kN.
pub fn equation_residuals(frame: &FrameModel, h: &ResponseHistory) -> Vec<f64> {
    let m = frame.mass_internal();
    let c = frame.damping_coefficient();
    let cos = frame.cos_theta();
    (0..h.len())
        .map(|k| m * h.a[k] + c * h.v[k] + frame.frame_stiffness * h.u[k] + cos * h.r_brace[k] + m * h.ag[k])
        .collect()
}
