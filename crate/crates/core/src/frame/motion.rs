//! Ground-motion records: two-column CSV, PEER AT2, and seeded synthetic records.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::FrameError;

/// Standard gravity in mm/s².
pub const G_MM_S2: f64 = 9806.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelUnit {
    G,
    MmPerS2,
    CmPerS2,
    MPerS2,
}

impl AccelUnit {
    /// Multiplier converting this unit to mm/s².
    pub fn to_mm_s2(self) -> f64 {
        match self {
            Self::G => G_MM_S2,
            Self::MmPerS2 => 1.0,
            Self::CmPerS2 => 10.0,
            Self::MPerS2 => 1000.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::G => "g",
            Self::MmPerS2 => "mm/s2",
            Self::CmPerS2 => "cm/s2",
            Self::MPerS2 => "m/s2",
        }
    }
}

impl FromStr for AccelUnit {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('^', "").as_str() {
            "g" => Ok(Self::G),
            "mm/s2" => Ok(Self::MmPerS2),
            "cm/s2" | "gal" => Ok(Self::CmPerS2),
            "m/s2" => Ok(Self::MPerS2),
            other => Err(FrameError::UnknownUnits(format!("unrecognised unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionFormat {
    /// Header `t,ag` or `t,ag[unit]`, uniform time step.
    Csv2Col,
    /// PEER NGA `.AT2`.
    PeerAt2,
}

impl FromStr for MotionFormat {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv2col" => Ok(Self::Csv2Col),
            "peer_at2" => Ok(Self::PeerAt2),
            other => Err(FrameError::MalformedFile(format!("unknown motion format `{other}`"))),
        }
    }
}

/// Uniformly sampled horizontal ground acceleration, stored in mm/s² with
/// the scale factor already applied. Sample `k` is at `t = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMotion {
    dt: f64,
    accel: Vec<f64>,
    scale: f64,
}

impl GroundMotion {
    /// `accel` in `unit`, multiplied by `scale`.
    pub fn new(dt: f64, accel: &[f64], unit: AccelUnit, scale: f64) -> Result<Self, FrameError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FrameError::MalformedFile(format!("dt = {dt}")));
        }
        if accel.is_empty() {
            return Err(FrameError::MalformedFile("no acceleration samples".into()));
        }
        if !scale.is_finite() || accel.iter().any(|a| !a.is_finite()) {
            return Err(FrameError::MalformedFile("non-finite acceleration".into()));
        }
        let k = unit.to_mm_s2() * scale;
        Ok(Self {
            dt,
            accel: accel.iter().map(|a| a * k).collect(),
            scale,
        })
    }

    /// `n` samples of zero acceleration.
    pub fn zeros(dt: f64, n: usize) -> Self {
        Self::new(dt, &vec![0.0; n.max(1)], AccelUnit::MmPerS2, 1.0).expect("valid zero record")
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Accelerations in mm/s².
    pub fn accelerations(&self) -> &[f64] {
        &self.accel
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.accel.len() - 1) as f64 * self.dt
    }

    pub fn pga(&self) -> f64 {
        self.accel.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }

    /// Acceleration at sub-sample `j` of interval `k`, with `substeps`
    /// sub-samples per interval, by linear interpolation.
    pub fn interpolated(&self, k: usize, j: usize, substeps: usize) -> f64 {
        if j == 0 || k + 1 >= self.accel.len() {
            return self.accel[k.min(self.accel.len() - 1)];
        }
        let s = j as f64 / substeps as f64;
        self.accel[k] + (self.accel[k + 1] - self.accel[k]) * s
    }

    /// Writes `t,ag[mm/s2]` CSV (already scaled).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,ag[mm/s2]\n");
        for (k, a) in self.accel.iter().enumerate() {
            out.push_str(&format!("{},{}\n", k as f64 * self.dt, a));
        }
        out
    }
}

/// Reads a ground-motion file. `unit` is used when the file does not
/// declare one; a declared unit that disagrees with `unit` is an error.
pub fn load_ground_motion(
    path: impl AsRef<Path>,
    format: MotionFormat,
    scale: f64,
    unit: Option<AccelUnit>,
) -> Result<GroundMotion, FrameError> {
    let text = fs::read_to_string(path).map_err(|e| FrameError::MalformedFile(e.to_string()))?;
    match format {
        MotionFormat::Csv2Col => parse_csv2col(&text, scale, unit),
        MotionFormat::PeerAt2 => parse_peer_at2(&text, scale, unit),
    }
}

fn resolve_unit(declared: Option<AccelUnit>, flag: Option<AccelUnit>) -> Result<AccelUnit, FrameError> {
    match (declared, flag) {
        (Some(d), Some(f)) if d != f => Err(FrameError::UnknownUnits(format!(
            "file declares {} but {} was requested",
            d.as_str(),
            f.as_str()
        ))),
        (Some(u), _) | (None, Some(u)) => Ok(u),
        (None, None) => Err(FrameError::UnknownUnits(
            "acceleration unit not declared in file or given explicitly".into(),
        )),
    }
}

pub fn parse_csv2col(text: &str, scale: f64, unit: Option<AccelUnit>) -> Result<GroundMotion, FrameError> {
    let malformed = |m: String| FrameError::MalformedFile(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != 2 || cols[0] != "t" || !cols[1].starts_with("ag") {
        return Err(malformed(format!("expected header `t,ag`, found `{header}`")));
    }
    let declared = match cols[1].strip_prefix("ag").unwrap() {
        "" => None,
        rest => {
            let inner = rest
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| malformed(format!("bad acceleration column `{}`", cols[1])))?;
            Some(inner.parse::<AccelUnit>()?)
        }
    };
    let unit = resolve_unit(declared, unit)?;

    let mut t = Vec::new();
    let mut ag = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut parts = line.split(',').map(str::trim);
        let mut next = || -> Result<f64, FrameError> {
            parts
                .next()
                .ok_or_else(|| malformed(format!("row {} is short", i + 2)))?
                .parse()
                .map_err(|e| malformed(format!("row {}: {e}", i + 2)))
        };
        t.push(next()?);
        ag.push(next()?);
    }
    if t.len() < 2 {
        return Err(malformed("need at least two samples to infer dt".into()));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) {
        return Err(malformed("time must increase".into()));
    }
    for (k, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(malformed(format!("non-uniform time step at row {}", k + 3)));
        }
    }
    GroundMotion::new(dt, &ag, unit, scale)
}

pub fn parse_peer_at2(text: &str, scale: f64, unit: Option<AccelUnit>) -> Result<GroundMotion, FrameError> {
    let malformed = |m: &str| FrameError::MalformedFile(m.to_string());
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 5 {
        return Err(malformed("AT2 file shorter than its four header lines"));
    }
    let units_line = lines[2].to_ascii_uppercase();
    let declared = if units_line.contains("UNITS OF G") || units_line.contains("IN G") {
        Some(AccelUnit::G)
    } else if units_line.contains("CM/S") {
        Some(AccelUnit::CmPerS2)
    } else {
        None
    };
    let unit = resolve_unit(declared, unit)?;

    let modern = Regex::new(r"(?i)NPTS\s*=\s*(\d+)\s*,\s*DT\s*=\s*([0-9.Ee+-]+)").unwrap();
    let legacy = Regex::new(r"^\s*(\d+)\s+([0-9.Ee+-]+)\s+NPTS").unwrap();
    let caps = modern
        .captures(lines[3])
        .or_else(|| legacy.captures(lines[3]))
        .ok_or_else(|| malformed("fourth header line lacks NPTS and DT"))?;
    let npts: usize = caps[1].parse().map_err(|_| malformed("bad NPTS"))?;
    let dt: f64 = caps[2].parse().map_err(|_| malformed("bad DT"))?;

    let mut values = Vec::with_capacity(npts);
    for tok in lines[4..].iter().flat_map(|l| l.split_whitespace()) {
        if values.len() == npts {
            break;
        }
        values.push(
            tok.parse::<f64>()
                .map_err(|_| FrameError::MalformedFile(format!("bad sample `{tok}`")))?,
        );
    }
    if values.len() < npts {
        return Err(FrameError::MalformedFile(format!(
            "NPTS = {npts} but only {} samples present",
            values.len()
        )));
    }
    GroundMotion::new(dt, &values, unit, scale)
}

/// Parameters of the seeded synthetic accelerogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMotion {
    pub seed: u64,
    /// s
    pub duration: f64,
    /// s
    pub dt: f64,
    /// Peak ground acceleration, g.
    pub pga_g: f64,
    pub components: usize,
}

impl Default for SyntheticMotion {
    fn default() -> Self {
        Self {
            seed: 42,
            duration: 20.0,
            dt: 0.01,
            pga_g: 0.155,
            components: 24,
        }
    }
}

impl SyntheticMotion {
    /// Sum of randomly phased sinusoids (frequencies log-uniform in
    /// 0.3–10 Hz) under a rise / plateau / exponential-decay envelope,
    /// normalised to the requested PGA.
    pub fn generate(&self) -> Result<GroundMotion, FrameError> {
        if !(self.duration > 0.0 && self.dt > 0.0 && self.components > 0) {
            return Err(FrameError::InvalidModel("bad synthetic motion parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let waves: Vec<(f64, f64, f64)> = (0..self.components)
            .map(|_| {
                let f = 0.3 * (10.0_f64 / 0.3).powf(rng.gen::<f64>());
                let phase = std::f64::consts::TAU * rng.gen::<f64>();
                let amp = rng.gen_range(0.5..1.0);
                (f, phase, amp)
            })
            .collect();
        let n = (self.duration / self.dt).round() as usize + 1;
        let rise = 0.1 * self.duration;
        let plateau_end = 0.4 * self.duration;
        // Envelope decays to 5 % by the end of the record.
        let decay = (20.0_f64).ln() / (self.duration - plateau_end);
        let mut accel: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 * self.dt;
                let env = if t < rise {
                    (t / rise).powi(2)
                } else if t <= plateau_end {
                    1.0
                } else {
                    (-decay * (t - plateau_end)).exp()
                };
                let sum: f64 = waves
                    .iter()
                    .map(|(f, p, a)| a * (std::f64::consts::TAU * f * t + p).sin())
                    .sum();
                env * sum
            })
            .collect();
        let peak = accel.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        if peak > 0.0 {
            for a in &mut accel {
                *a *= self.pga_g / peak;
            }
        }
        GroundMotion::new(self.dt, &accel, AccelUnit::G, 1.0)
    }
}
