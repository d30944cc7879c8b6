//! ℓ₁-regularised least squares by cyclic coordinate descent.
//!
//! Minimises `(1/2n)·‖R − Θξ‖² + λ·Σ_j w_j·|ξ_j|` where `w_j = 0` for
//! unpenalised columns, `w_j = 1` otherwise, or `w_j = rms(θ_j)` when
//! standardisation is requested (equivalent to solving on unit-RMS columns
//! and mapping the coefficients back).
//!
//! Coordinates are visited in column order. The gradient is maintained
//! through the Gram matrix so one sweep costs `O(m²)`; convergence is judged
//! on the subgradient optimality (KKT) conditions recomputed from the explicit
//! residual.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LassoError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid library: {0}")]
    InvalidLibrary(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no convergence after {sweeps} sweeps (worst KKT violation {violation:e})")]
    NonConvergence { sweeps: usize, violation: f64 },
}

/// Column-major `n × m` matrix of basis-function evaluations with unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryMatrix {
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl LibraryMatrix {
    pub fn new(columns: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, LassoError> {
        if columns.is_empty() {
            return Err(LassoError::InvalidLibrary("no columns".into()));
        }
        if labels.len() != columns.len() {
            return Err(LassoError::InvalidLibrary(format!(
                "{} labels for {} columns",
                labels.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        if n == 0 {
            return Err(LassoError::InvalidLibrary("no rows".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(LassoError::InvalidLibrary(format!(
                    "column {j} has {} rows, expected {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(LassoError::InvalidLibrary(format!(
                    "column `{}` has non-finite entries",
                    labels[j]
                )));
            }
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(LassoError::InvalidLibrary(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { columns, labels })
    }

    /// Builds from unlabeled columns, labelling them `c0, c1, …`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, LassoError> {
        let labels = (0..columns.len()).map(|j| format!("c{j}")).collect();
        Self::new(columns, labels)
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `Θ·ξ`.
    pub fn apply(&self, xi: &[f64]) -> Result<Vec<f64>, LassoError> {
        if xi.len() != self.n_cols() {
            return Err(LassoError::DimensionMismatch(format!(
                "{} coefficients for {} columns",
                xi.len(),
                self.n_cols()
            )));
        }
        let mut out = vec![0.0; self.n_rows()];
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (col, w) in self.columns.iter().zip(xi) {
                acc += w * col[row];
            }
            *o = acc;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    /// Tolerance on the worst KKT violation.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Columns excluded from the ℓ₁ penalty.
    pub unpenalized_labels: Vec<String>,
    /// Penalise each column in proportion to its RMS value.
    pub standardize: bool,
    /// Record the objective after every sweep in [`SparseSolution::objective_trace`].
    pub record_objective: bool,
    /// Follow each sweep with an exact solve on the current support and sign
    /// pattern, truncated at the first sign change.
    pub active_set_steps: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 100_000,
            unpenalized_labels: vec!["linear".into(), "const".into()],
            standardize: false,
            record_objective: false,
            active_set_steps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    pub xi: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub n_iterations: usize,
    /// Per-column penalty weight `w_j` actually used.
    pub penalty_weights: Vec<f64>,
    /// Objective after each sweep (empty unless requested).
    pub objective_trace: Vec<f64>,
}

impl SparseSolution {
    /// Number of nonzero coefficients among penalised columns.
    pub fn penalized_nonzeros(&self) -> usize {
        self.xi
            .iter()
            .zip(&self.penalty_weights)
            .filter(|(x, w)| **w > 0.0 && **x != 0.0)
            .count()
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(theta: &LibraryMatrix, r: &[f64], xi: &[f64]) -> Vec<f64> {
    let mut res = r.to_vec();
    for (col, &w) in theta.columns.iter().zip(xi) {
        if w != 0.0 {
            for (e, c) in res.iter_mut().zip(col) {
                *e -= w * c;
            }
        }
    }
    res
}

/// `(1/n)·Θᵀ(R − Θξ)` from the explicit residual.
fn gradient(theta: &LibraryMatrix, r: &[f64], xi: &[f64]) -> Vec<f64> {
    let n = theta.n_rows() as f64;
    let res = residual(theta, r, xi);
    theta.columns.iter().map(|c| dot(c, &res) / n).collect()
}

fn objective(theta: &LibraryMatrix, r: &[f64], xi: &[f64], lambda: f64, weights: &[f64]) -> f64 {
    let n = theta.n_rows() as f64;
    let res = residual(theta, r, xi);
    let penalty: f64 = xi.iter().zip(weights).map(|(x, w)| w * x.abs()).sum();
    dot(&res, &res) / (2.0 * n) + lambda * penalty
}

fn worst_violation(g: &[f64], xi: &[f64], lambda: f64, weights: &[f64]) -> f64 {
    g.iter()
        .zip(xi)
        .zip(weights)
        .map(|((&g, &x), &w)| {
            let t = lambda * w;
            if t == 0.0 {
                g.abs()
            } else if x == 0.0 {
                (g.abs() - t).max(0.0)
            } else {
                (g - t * x.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn penalty_weights(theta: &LibraryMatrix, opts: &LassoOptions) -> Vec<f64> {
    let n = theta.n_rows() as f64;
    theta
        .columns
        .iter()
        .zip(&theta.labels)
        .map(|(col, label)| {
            if opts.unpenalized_labels.iter().any(|u| u == label) {
                0.0
            } else if opts.standardize {
                (dot(col, col) / n).sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// In-place Cholesky factorisation of a row-major SPD matrix; `None` when a
/// pivot is not safely positive.
fn cholesky(mut a: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0, f64::max);
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 1e-13 * scale) {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / d;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut v = b[i];
        for p in 0..i {
            v -= l[i * k + p] * b[p];
        }
        b[i] = v / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = b[i];
        for p in i + 1..k {
            v -= l[p * k + i] * b[p];
        }
        b[i] = v / l[i * k + i];
    }
}

/// Moves `xi` toward the minimiser of the objective restricted to the current
/// support and sign pattern, stopping where a penalised coefficient would
/// change sign. The objective is a convex quadratic along that segment, so it
/// does not increase.
fn active_set_step(
    gram: &[f64],
    corr: &[f64],
    xi: &mut [f64],
    g: &mut [f64],
    lambda: f64,
    weights: &[f64],
) -> StepOutcome {
    let m = xi.len();
    let support: Vec<usize> = (0..m)
        .filter(|&j| gram[j * m + j] > 0.0 && (xi[j] != 0.0 || lambda * weights[j] == 0.0))
        .collect();
    let k = support.len();
    if k == 0 {
        return StepOutcome::Skipped;
    }
    let mut sub = vec![0.0; k * k];
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            sub[a * k + b] = gram[i * m + j];
        }
    }
    let Some(l) = cholesky(sub, k) else {
        return StepOutcome::Skipped;
    };
    let mut z: Vec<f64> = support
        .iter()
        .map(|&j| corr[j] - lambda * weights[j] * xi[j].signum() * f64::from(xi[j] != 0.0))
        .collect();
    cholesky_solve(&l, k, &mut z);
    if z.iter().any(|v| !v.is_finite()) {
        return StepOutcome::Skipped;
    }

    let mut step = 1.0;
    let mut blocking = None;
    for (a, &j) in support.iter().enumerate() {
        if lambda * weights[j] > 0.0 && z[a].signum() != xi[j].signum() {
            let t = xi[j] / (xi[j] - z[a]);
            if t < step {
                step = t;
                blocking = Some(j);
            }
        }
    }
    for (a, &j) in support.iter().enumerate() {
        let before = xi[j];
        xi[j] += step * (z[a] - before);
        if lambda * weights[j] > 0.0 && xi[j].signum() != before.signum() {
            xi[j] = 0.0;
        }
    }
    if let Some(j) = blocking {
        xi[j] = 0.0;
    }
    for (i, gi) in g.iter_mut().enumerate() {
        let row = &gram[i * m..(i + 1) * m];
        *gi = corr[i] - dot(row, xi);
    }
    if blocking.is_some() {
        StepOutcome::Blocked
    } else {
        StepOutcome::Full
    }
}

#[derive(Debug, PartialEq, Eq)]
enum StepOutcome {
    Skipped,
    Blocked,
    Full,
}

/// Solves the LASSO problem for library `theta`, targets `r` and weight `lambda`.
pub fn lasso_solve(
    theta: &LibraryMatrix,
    r: &[f64],
    lambda: f64,
    opts: &LassoOptions,
) -> Result<SparseSolution, LassoError> {
    let n = theta.n_rows();
    let m = theta.n_cols();
    if r.len() != n {
        return Err(LassoError::DimensionMismatch(format!(
            "library has {n} rows but target has {}",
            r.len()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(LassoError::InvalidArgument("non-finite target".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LassoError::InvalidArgument(format!("lambda = {lambda}")));
    }
    if !(opts.tol > 0.0) {
        return Err(LassoError::InvalidArgument(format!("tol = {}", opts.tol)));
    }
    let nf = n as f64;
    let weights = penalty_weights(theta, opts);

    // Gram matrix (1/n)·ΘᵀΘ, row-major, and correlations (1/n)·ΘᵀR.
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let v = dot(&theta.columns[i], &theta.columns[j]) / nf;
            gram[i * m + j] = v;
            gram[j * m + i] = v;
        }
    }
    let corr: Vec<f64> = theta.columns.iter().map(|c| dot(c, r) / nf).collect();
    let r_sq = dot(r, r) / nf;

    let mut xi = vec![0.0; m];
    let mut g = corr.clone();
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut last_violation = f64::INFINITY;
    let mut prev_obj = f64::INFINITY;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for j in 0..m {
            let a = gram[j * m + j];
            if a == 0.0 {
                continue;
            }
            let rho = g[j] + a * xi[j];
            let updated = soft_threshold(rho, lambda * weights[j]) / a;
            let delta = updated - xi[j];
            if delta != 0.0 {
                xi[j] = updated;
                let row = &gram[j * m..(j + 1) * m];
                for (gk, gjk) in g.iter_mut().zip(row) {
                    *gk -= delta * gjk;
                }
            }
        }

        if opts.active_set_steps {
            // Repeat while a sign change blocks the step; each pass drops one
            // coefficient from the support, so this terminates.
            while active_set_step(&gram, &corr, &mut xi, &mut g, lambda, &weights)
                == StepOutcome::Blocked
            {}
        }

        if cfg!(debug_assertions) {
            // ½‖R‖²/n − ½ξ·(c + g) + λ·Σw|ξ|, valid because g = c − Gξ.
            let pen: f64 = xi.iter().zip(&weights).map(|(x, w)| w * x.abs()).sum();
            let quad: f64 = xi.iter().zip(corr.iter().zip(&g)).map(|(x, (c, g))| x * (c + g)).sum();
            let obj = 0.5 * r_sq - 0.5 * quad + lambda * pen;
            let slack = 1e-9 * (0.5 * r_sq).max(1.0);
            debug_assert!(obj <= prev_obj + slack, "objective increased: {prev_obj} -> {obj}");
            prev_obj = obj;
        }
        if opts.record_objective {
            trace.push(objective(theta, r, &xi, lambda, &weights));
        }

        if worst_violation(&g, &xi, lambda, &weights) <= opts.tol {
            // Confirm against the explicit residual and resynchronise.
            g = gradient(theta, r, &xi);
            last_violation = worst_violation(&g, &xi, lambda, &weights);
            if last_violation <= opts.tol {
                let objective = objective(theta, r, &xi, lambda, &weights);
                return Ok(SparseSolution {
                    xi,
                    lambda,
                    objective,
                    n_iterations: sweeps,
                    penalty_weights: weights,
                    objective_trace: trace,
                });
            }
        } else if sweeps % 1000 == 0 {
            g = gradient(theta, r, &xi);
        }
    }
    let g = gradient(theta, r, &xi);
    last_violation = last_violation.min(worst_violation(&g, &xi, lambda, &weights));
    Err(LassoError::NonConvergence {
        sweeps,
        violation: last_violation,
    })
}

/// Worst violation of the subgradient optimality conditions for `sol`.
pub fn kkt_violation(
    theta: &LibraryMatrix,
    r: &[f64],
    sol: &SparseSolution,
) -> Result<f64, LassoError> {
    if r.len() != theta.n_rows() {
        return Err(LassoError::DimensionMismatch(format!(
            "library has {} rows but target has {}",
            theta.n_rows(),
            r.len()
        )));
    }
    if sol.xi.len() != theta.n_cols() || sol.penalty_weights.len() != theta.n_cols() {
        return Err(LassoError::DimensionMismatch(format!(
            "solution has {} coefficients for {} columns",
            sol.xi.len(),
            theta.n_cols()
        )));
    }
    let g = gradient(theta, r, &sol.xi);
    Ok(worst_violation(&g, &sol.xi, sol.lambda, &sol.penalty_weights))
}
