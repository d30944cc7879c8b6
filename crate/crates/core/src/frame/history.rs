//! Response histories, their CSV form, and run-to-run comparison.

use std::fs;
use std::path::Path;

use super::FrameError;
use crate::pisindy;

/// Recorded response of a frame run. All series share one length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseHistory {
    /// s
    pub t: Vec<f64>,
    /// Storey displacement relative to the ground, mm.
    pub u: Vec<f64>,
    /// mm/s
    pub v: Vec<f64>,
    /// Relative acceleration, mm/s².
    pub a: Vec<f64>,
    /// Brace axial deformation `u·cosθ`, mm.
    pub x_brace: Vec<f64>,
    /// Brace axial force, kN.
    pub r_brace: Vec<f64>,
    /// `u / h`.
    pub drift: Vec<f64>,
    /// Ground acceleration at each sample, mm/s². Not part of the CSV.
    pub ag: Vec<f64>,
}

pub const CSV_HEADER: &str = "t,u,v,a,x_brace,R_brace,drift";

impl ResponseHistory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn peak_drift(&self) -> f64 {
        self.drift.iter().fold(0.0_f64, |m, d| m.max(d.abs()))
    }

    pub fn peak_brace_deformation(&self) -> f64 {
        self.x_brace.iter().fold(0.0_f64, |m, d| m.max(d.abs()))
    }

    pub fn peak_brace_force(&self) -> f64 {
        self.r_brace.iter().fold(0.0_f64, |m, d| m.max(d.abs()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.t[k], self.u[k], self.v[k], self.a[k], self.x_brace[k], self.r_brace[k], self.drift[k]
            ));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), FrameError> {
        fs::write(path, self.to_csv_string()).map_err(|e| FrameError::MalformedFile(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self, FrameError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            Some(h) => {
                return Err(FrameError::MalformedFile(format!(
                    "expected header `{CSV_HEADER}`, found `{h}`"
                )))
            }
            None => return Err(FrameError::MalformedFile("empty response file".into())),
        }
        let mut h = Self::default();
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| FrameError::MalformedFile(format!("row {}: {e}", i + 2)))?;
            if vals.len() != 7 {
                return Err(FrameError::MalformedFile(format!(
                    "row {} has {} fields",
                    i + 2,
                    vals.len()
                )));
            }
            h.t.push(vals[0]);
            h.u.push(vals[1]);
            h.v.push(vals[2]);
            h.a.push(vals[3]);
            h.x_brace.push(vals[4]);
            h.r_brace.push(vals[5]);
            h.drift.push(vals[6]);
        }
        h.ag = vec![f64::NAN; h.t.len()];
        Ok(h)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, FrameError> {
        let text = fs::read_to_string(path).map_err(|e| FrameError::MalformedFile(e.to_string()))?;
        Self::from_csv_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub nrmse_drift: f64,
    pub nrmse_force: f64,
    pub peak_drift_ref: f64,
    pub peak_drift_test: f64,
}

impl ComparisonReport {
    /// `|peak_test − peak_ref| / peak_ref`.
    pub fn peak_drift_discrepancy(&self) -> f64 {
        (self.peak_drift_test - self.peak_drift_ref).abs() / self.peak_drift_ref
    }
}

/// NRMSE of drift and brace force of `test` against `reference`.
///
/// A constant reference signal (e.g. a zero-response run) compares as 0 when
/// the test signal equals it exactly.
pub fn compare_runs(reference: &ResponseHistory, test: &ResponseHistory) -> Result<ComparisonReport, FrameError> {
    if reference.len() != test.len() {
        return Err(FrameError::LengthMismatch(reference.len(), test.len()));
    }
    if let Some(k) = reference
        .t
        .iter()
        .zip(&test.t)
        .position(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(FrameError::SamplingMismatch(k));
    }
    let metric = |r: &[f64], m: &[f64]| -> Result<f64, FrameError> {
        match pisindy::nrmse(r, m) {
            Ok(v) => Ok(v),
            Err(pisindy::PiSindyError::DegenerateReference) if r == m => Ok(0.0),
            Err(e) => Err(FrameError::Metric(e.to_string())),
        }
    };
    Ok(ComparisonReport {
        nrmse_drift: metric(&reference.drift, &test.drift)?,
        nrmse_force: metric(&reference.r_brace, &test.r_brace)?,
        peak_drift_ref: reference.peak_drift(),
        peak_drift_test: test.peak_drift(),
    })
}
