//! Reference uniaxial brace materials and cyclic displacement protocols.
//!
//! These play the role of the physical specimen: they produce the cyclic
//! test data used for training and the brace force in reference frame runs.
//! Both materials are symmetric in tension and compression; friction between
//! core and casing is not modelled.

use thiserror::Error;

use crate::provider::{BraceProvider, ProviderError};
use crate::series::{SeriesError, SignalSeries};

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid loading protocol: {0}")]
    InvalidProtocol(String),
}

/// A rate-independent uniaxial force–deformation law.
pub trait Material: Clone {
    /// Applies a deformation increment and returns the new force (kN).
    fn material_step(&mut self, dx: f64) -> f64;
    /// Current deformation (mm).
    fn deformation(&self) -> f64;
    /// Current force (kN).
    fn force(&self) -> f64;
    /// Back to the virgin, undeformed state.
    fn reset(&mut self);
    /// Elastic stiffness (kN/mm).
    fn initial_stiffness(&self) -> f64;
}

/// Bilinear kinematic-hardening spring.
///
/// Integrated by elastic-predictor / plastic-corrector on the plastic
/// deformation, with linear kinematic hardening modulus `H = k1·k2/(k1−k2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearMaterial {
    k1: f64,
    k2: f64,
    dy: f64,
    hardening: f64,
    x: f64,
    xp: f64,
    force: f64,
}

impl BilinearMaterial {
    /// `dy = f64::INFINITY` gives a linear elastic spring.
    pub fn new(k1: f64, k2: f64, dy: f64) -> Result<Self, MaterialError> {
        if !(k1 > k2 && k2 >= 0.0 && k1.is_finite()) {
            return Err(MaterialError::InvalidParameter(format!(
                "need k1 > k2 ≥ 0, got k1 = {k1}, k2 = {k2}"
            )));
        }
        if !(dy > 0.0) {
            return Err(MaterialError::InvalidParameter(format!("dy = {dy}")));
        }
        Ok(Self {
            k1,
            k2,
            dy,
            hardening: k1 * k2 / (k1 - k2),
            x: 0.0,
            xp: 0.0,
            force: 0.0,
        })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }
}

impl Material for BilinearMaterial {
    fn material_step(&mut self, dx: f64) -> f64 {
        self.x += dx;
        let trial = self.k1 * (self.x - self.xp);
        let relative = trial - self.hardening * self.xp;
        let excess = relative.abs() - self.k1 * self.dy;
        if excess > 0.0 {
            self.xp += excess / (self.k1 + self.hardening) * relative.signum();
        }
        self.force = self.k1 * (self.x - self.xp);
        self.force
    }

    fn deformation(&self) -> f64 {
        self.x
    }

    fn force(&self) -> f64 {
        self.force
    }

    fn reset(&mut self) {
        self.x = 0.0;
        self.xp = 0.0;
        self.force = 0.0;
    }

    fn initial_stiffness(&self) -> f64 {
        self.k1
    }
}

/// Which branch the smooth material is currently travelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Virgin,
    Loading,
    Unloading,
}

/// Giuffré–Menegotto–Pinto smooth bilinear law with curvature degradation
/// (no isotropic hardening).
///
/// Between reversals the force follows
/// `σ* = b·ε* + (1−b)·ε*/(1+|ε*|^R)^(1/R)` in coordinates normalised between
/// the last reversal point and the intersection of the elastic and hardening
/// asymptotes, with `R = R0·(1 − cR1·ξ/(cR2 + ξ))` shrinking as the plastic
/// excursion `ξ` grows.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothGmpMaterial {
    k0: f64,
    ry: f64,
    b: f64,
    r0: f64,
    cr1: f64,
    cr2: f64,
    // Load-reversal memory.
    branch: Branch,
    x_max: f64,
    x_min: f64,
    x_pl: f64,
    x_s0: f64,
    f_s0: f64,
    x_r: f64,
    f_r: f64,
    x: f64,
    force: f64,
}

impl SmoothGmpMaterial {
    pub fn new(k0: f64, ry: f64, b: f64, r0: f64, cr1: f64, cr2: f64) -> Result<Self, MaterialError> {
        let check = |ok: bool, what: String| {
            if ok {
                Ok(())
            } else {
                Err(MaterialError::InvalidParameter(what))
            }
        };
        check(k0 > 0.0 && k0.is_finite(), format!("k0 = {k0}"))?;
        check(ry > 0.0 && ry.is_finite(), format!("Ry = {ry}"))?;
        check((0.0..1.0).contains(&b), format!("b = {b}"))?;
        check(r0 > 0.0 && r0.is_finite(), format!("R0 = {r0}"))?;
        check((0.0..1.0).contains(&cr1), format!("cR1 = {cr1}"))?;
        check(cr2 > 0.0 && cr2.is_finite(), format!("cR2 = {cr2}"))?;
        let mut m = Self {
            k0,
            ry,
            b,
            r0,
            cr1,
            cr2,
            branch: Branch::Virgin,
            x_max: 0.0,
            x_min: 0.0,
            x_pl: 0.0,
            x_s0: 0.0,
            f_s0: 0.0,
            x_r: 0.0,
            f_r: 0.0,
            x: 0.0,
            force: 0.0,
        };
        m.reset();
        Ok(m)
    }

    pub fn yield_force(&self) -> f64 {
        self.ry
    }

    pub fn yield_displacement(&self) -> f64 {
        self.ry / self.k0
    }
}

impl Material for SmoothGmpMaterial {
    fn material_step(&mut self, dx: f64) -> f64 {
        let x_prev = self.x;
        let f_prev = self.force;
        let x = x_prev + dx;
        let dy = self.yield_displacement();
        let k_sh = self.b * self.k0;

        if self.branch == Branch::Virgin {
            if dx == 0.0 {
                return self.force;
            }
            self.x_max = dy;
            self.x_min = -dy;
            if dx < 0.0 {
                self.branch = Branch::Unloading;
                self.x_s0 = self.x_min;
                self.f_s0 = -self.ry;
                self.x_pl = self.x_min;
            } else {
                self.branch = Branch::Loading;
                self.x_s0 = self.x_max;
                self.f_s0 = self.ry;
                self.x_pl = self.x_max;
            }
        }

        if self.branch == Branch::Unloading && dx > 0.0 {
            self.branch = Branch::Loading;
            self.x_r = x_prev;
            self.f_r = f_prev;
            self.x_min = self.x_min.min(x_prev);
            self.x_s0 = (self.ry - k_sh * dy - self.f_r + self.k0 * self.x_r) / (self.k0 - k_sh);
            self.f_s0 = self.ry + k_sh * (self.x_s0 - dy);
            self.x_pl = self.x_max;
        } else if self.branch == Branch::Loading && dx < 0.0 {
            self.branch = Branch::Unloading;
            self.x_r = x_prev;
            self.f_r = f_prev;
            self.x_max = self.x_max.max(x_prev);
            self.x_s0 = (-self.ry + k_sh * dy - self.f_r + self.k0 * self.x_r) / (self.k0 - k_sh);
            self.f_s0 = -self.ry + k_sh * (self.x_s0 + dy);
            self.x_pl = self.x_min;
        }

        let excursion = ((self.x_pl - self.x_s0) / dy).abs();
        let r = self.r0 * (1.0 - self.cr1 * excursion / (self.cr2 + excursion));
        let strain_ratio = (x - self.x_r) / (self.x_s0 - self.x_r);
        let denom = (1.0 + strain_ratio.abs().powf(r)).powf(1.0 / r);
        let normalised = self.b * strain_ratio + (1.0 - self.b) * strain_ratio / denom;
        self.force = normalised * (self.f_s0 - self.f_r) + self.f_r;
        self.x = x;
        self.force
    }

    fn deformation(&self) -> f64 {
        self.x
    }

    fn force(&self) -> f64 {
        self.force
    }

    fn reset(&mut self) {
        self.branch = Branch::Virgin;
        self.x_max = 0.0;
        self.x_min = 0.0;
        self.x_pl = 0.0;
        self.x_s0 = 0.0;
        self.f_s0 = 0.0;
        self.x_r = 0.0;
        self.f_r = 0.0;
        self.x = 0.0;
        self.force = 0.0;
    }

    fn initial_stiffness(&self) -> f64 {
        self.k0
    }
}

/// Brace properties shared by both reference materials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BraceProperties {
    /// Elastic axial stiffness, kN/mm.
    pub k1: f64,
    /// Yield deformation, mm.
    pub dy: f64,
    /// Post-yield to elastic stiffness ratio.
    pub b: f64,
    pub r0: f64,
    pub cr1: f64,
    pub cr2: f64,
}

impl Default for BraceProperties {
    fn default() -> Self {
        Self {
            k1: 180.0,
            dy: 4.0,
            b: 0.02,
            r0: 20.0,
            cr1: 0.925,
            cr2: 0.15,
        }
    }
}

impl BraceProperties {
    pub fn yield_force(&self) -> f64 {
        self.k1 * self.dy
    }

    pub fn bilinear(&self) -> Result<BilinearMaterial, MaterialError> {
        BilinearMaterial::new(self.k1, self.b * self.k1, self.dy)
    }

    pub fn smooth(&self) -> Result<SmoothGmpMaterial, MaterialError> {
        SmoothGmpMaterial::new(self.k1, self.yield_force(), self.b, self.r0, self.cr1, self.cr2)
    }
}

/// Either reference material behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleMaterial {
    Bilinear(BilinearMaterial),
    Smooth(SmoothGmpMaterial),
}

impl Material for OracleMaterial {
    fn material_step(&mut self, dx: f64) -> f64 {
        match self {
            Self::Bilinear(m) => m.material_step(dx),
            Self::Smooth(m) => m.material_step(dx),
        }
    }
    fn deformation(&self) -> f64 {
        match self {
            Self::Bilinear(m) => m.deformation(),
            Self::Smooth(m) => m.deformation(),
        }
    }
    fn force(&self) -> f64 {
        match self {
            Self::Bilinear(m) => m.force(),
            Self::Smooth(m) => m.force(),
        }
    }
    fn reset(&mut self) {
        match self {
            Self::Bilinear(m) => m.reset(),
            Self::Smooth(m) => m.reset(),
        }
    }
    fn initial_stiffness(&self) -> f64 {
        match self {
            Self::Bilinear(m) => m.initial_stiffness(),
            Self::Smooth(m) => m.initial_stiffness(),
        }
    }
}

/// Adapts a [`Material`] to the [`BraceProvider`] interface.
#[derive(Debug, Clone)]
pub struct MaterialBrace<M> {
    material: M,
    saved: Option<M>,
}

impl<M: Material> MaterialBrace<M> {
    pub fn new(mut material: M) -> Self {
        material.reset();
        Self {
            material,
            saved: None,
        }
    }

    pub fn material(&self) -> &M {
        &self.material
    }
}

impl<M: Material> BraceProvider for MaterialBrace<M> {
    fn init(&mut self, x0: f64) -> Result<f64, ProviderError> {
        self.material.reset();
        self.saved = None;
        Ok(if x0 == 0.0 {
            self.material.force()
        } else {
            self.material.material_step(x0)
        })
    }

    fn step(&mut self, x: f64) -> Result<f64, ProviderError> {
        let dx = x - self.material.deformation();
        Ok(self.material.material_step(dx))
    }

    fn snapshot(&mut self) -> Result<(), ProviderError> {
        self.saved = Some(self.material.clone());
        Ok(())
    }

    fn restore(&mut self) -> Result<(), ProviderError> {
        self.material = self
            .saved
            .clone()
            .ok_or(ProviderError::ProtocolMisuse("restore without snapshot"))?;
        Ok(())
    }
}

/// Increasing-amplitude cyclic displacement protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingProtocol {
    /// Peak displacement of each cycle, mm, non-decreasing.
    pub cycle_amplitudes: Vec<f64>,
    /// Samples per branch, counting both end points.
    pub points_per_branch: usize,
}

/// Default cycle amplitudes as multiples of the yield deformation.
pub const DEFAULT_AMPLITUDE_MULTIPLES: [f64; 13] =
    [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 12.0, 15.0, 18.0];

impl LoadingProtocol {
    /// The default protocol for a brace yielding at `dy`, 200 points per branch.
    pub fn default_for(dy: f64) -> Self {
        Self {
            cycle_amplitudes: DEFAULT_AMPLITUDE_MULTIPLES.iter().map(|k| k * dy).collect(),
            points_per_branch: 200,
        }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |m: String| Err(MaterialError::InvalidProtocol(m));
        if self.cycle_amplitudes.is_empty() {
            return bad("no cycle amplitudes".into());
        }
        if self.points_per_branch < 2 {
            return bad(format!("points_per_branch = {}", self.points_per_branch));
        }
        for (i, &a) in self.cycle_amplitudes.iter().enumerate() {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("amplitude {i} = {a}"));
            }
            if i > 0 && a < self.cycle_amplitudes[i - 1] {
                return bad(format!("amplitude {i} decreases"));
            }
        }
        Ok(())
    }
}

/// Samples the protocol as a piecewise-linear path
/// `0 → +a₁ → −a₁ → +a₂ → −a₂ → … → 0`, with pseudo-time `t_k = k` s.
pub fn generate_protocol(protocol: &LoadingProtocol) -> Result<SignalSeries, MaterialError> {
    protocol.validate()?;
    let mut targets = Vec::with_capacity(2 * protocol.cycle_amplitudes.len() + 1);
    for &a in &protocol.cycle_amplitudes {
        targets.push(a);
        targets.push(-a);
    }
    targets.push(0.0);
    let intervals = protocol.points_per_branch - 1;
    let mut x = vec![0.0];
    let mut from = 0.0;
    for &to in &targets {
        for k in 1..=intervals {
            let s = k as f64 / intervals as f64;
            x.push(if k == intervals { to } else { from + (to - from) * s });
        }
        from = to;
    }
    Ok(SignalSeries::from_displacements(x).expect("finite protocol samples"))
}

/// Drives a fresh copy of `material` along the displacement history of
/// `protocol` and returns the paired force record.
pub fn run_cyclic_pushover<M: Material>(
    material: &M,
    protocol: &SignalSeries,
) -> Result<SignalSeries, SeriesError> {
    let mut m = material.clone();
    m.reset();
    let xs = protocol.x();
    let mut forces = Vec::with_capacity(xs.len());
    let mut prev = 0.0;
    for &x in xs {
        forces.push(if x == prev { m.force() } else { m.material_step(x - prev) });
        prev = x;
    }
    protocol.clone().with_forces(forces)
}

/// Work enclosed by a force–deformation path, trapezoidal rule.
pub fn enclosed_work(x: &[f64], r: &[f64]) -> f64 {
    x.windows(2)
        .zip(r.windows(2))
        .map(|(xw, rw)| 0.5 * (rw[0] + rw[1]) * (xw[1] - xw[0]))
        .sum()
}
