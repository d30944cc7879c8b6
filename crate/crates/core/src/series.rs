//! Sampled displacement/force records.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series is empty")]
    EmptySeries,
    #[error("length mismatch: {what} has {got} samples, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("time stamps must be strictly increasing (violated at sample {0})")]
    NonMonotoneTime(usize),
    #[error("non-finite value in {what} at sample {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Paired time, displacement and (optionally) force samples.
///
/// Time is in seconds, displacement in mm, force in kN.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    t: Vec<f64>,
    x: Vec<f64>,
    r: Option<Vec<f64>>,
}

impl SignalSeries {
    pub fn new(t: Vec<f64>, x: Vec<f64>, r: Option<Vec<f64>>) -> Result<Self, SeriesError> {
        if x.len() != t.len() {
            return Err(SeriesError::LengthMismatch {
                what: "x",
                got: x.len(),
                expected: t.len(),
            });
        }
        if let Some(r) = &r {
            if r.len() != x.len() {
                return Err(SeriesError::LengthMismatch {
                    what: "R",
                    got: r.len(),
                    expected: x.len(),
                });
            }
            check_finite("R", r)?;
        }
        check_finite("t", &t)?;
        check_finite("x", &x)?;
        if let Some(k) = t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SeriesError::NonMonotoneTime(k + 1));
        }
        Ok(Self { t, x, r })
    }

    /// Displacement-only series with unit-spaced pseudo-time `t_k = k`.
    pub fn from_displacements(x: Vec<f64>) -> Result<Self, SeriesError> {
        let t = (0..x.len()).map(|k| k as f64).collect();
        Self::new(t, x, None)
    }

    /// Series with pseudo-time `t_k = k·dt`.
    pub fn uniform(dt: f64, x: Vec<f64>, r: Option<Vec<f64>>) -> Result<Self, SeriesError> {
        let t = (0..x.len()).map(|k| k as f64 * dt).collect();
        Self::new(t, x, r)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn forces(&self) -> Option<&[f64]> {
        self.r.as_deref()
    }

    pub fn with_forces(self, r: Vec<f64>) -> Result<Self, SeriesError> {
        Self::new(self.t, self.x, Some(r))
    }

    /// Largest absolute displacement.
    pub fn max_abs_x(&self) -> f64 {
        self.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Same series with displacement (and force) negated.
    pub fn negated(&self) -> Self {
        Self {
            t: self.t.clone(),
            x: self.x.iter().map(|v| -v).collect(),
            r: self.r.as_ref().map(|r| r.iter().map(|v| -v).collect()),
        }
    }

    /// Writes `t,x` or `t,x,R` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SeriesError> {
        let mut out = csv::Writer::from_writer(w);
        let map = |e: csv::Error| SeriesError::MalformedCsv(e.to_string());
        match &self.r {
            Some(r) => {
                out.write_record(["t", "x", "R"]).map_err(map)?;
                for k in 0..self.len() {
                    out.write_record([
                        self.t[k].to_string(),
                        self.x[k].to_string(),
                        r[k].to_string(),
                    ])
                    .map_err(map)?;
                }
            }
            None => {
                out.write_record(["t", "x"]).map_err(map)?;
                for k in 0..self.len() {
                    out.write_record([self.t[k].to_string(), self.x[k].to_string()])
                        .map_err(map)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), SeriesError> {
        self.write_csv(File::create(path)?)
    }

    /// Reads a CSV whose header is `t,x` or `t,x,R`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, SeriesError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| SeriesError::MalformedCsv(e.to_string()))?
            .clone();
        let names: Vec<&str> = headers.iter().collect();
        let has_r = match names.as_slice() {
            ["t", "x"] => false,
            ["t", "x", "R"] => true,
            _ => {
                return Err(SeriesError::MalformedCsv(format!(
                    "expected header `t,x` or `t,x,R`, found `{}`",
                    names.join(",")
                )))
            }
        };
        let (mut t, mut x, mut f) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SeriesError::MalformedCsv(e.to_string()))?;
            let field = |i: usize| -> Result<f64, SeriesError> {
                rec.get(i)
                    .ok_or_else(|| SeriesError::MalformedCsv(format!("row {} is short", line + 2)))?
                    .parse::<f64>()
                    .map_err(|e| SeriesError::MalformedCsv(format!("row {}: {e}", line + 2)))
            };
            t.push(field(0)?);
            x.push(field(1)?);
            if has_r {
                f.push(field(2)?);
            }
        }
        if x.is_empty() {
            return Err(SeriesError::EmptySeries);
        }
        Self::new(t, x, has_r.then_some(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, SeriesError> {
        Self::read_csv(File::open(path)?)
    }
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<(), SeriesError> {
    match v.iter().position(|s| !s.is_finite()) {
        Some(index) => Err(SeriesError::NonFinite { what, index }),
        None => Ok(()),
    }
}
