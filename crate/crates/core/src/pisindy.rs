//! Training and evaluating stop-operator sparse regression models.
//!
//! Training follows a fixed recipe: a uniform threshold grid
//! `r_i = i·|x|max/(m+1)`, a library whose columns are the stop-operator
//! outputs followed by the raw displacement and a constant, and a LASSO fit
//! of the measured force onto that library. The result is a
//! [`TrainedPiModel`] that evaluates forces for any new displacement history
//! and can be stepped sample by sample through [`PiSession`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hysteresis::{self, HysteresisError, PiModelDef, PiState};
use crate::lasso::{self, LassoError, LassoOptions, LibraryMatrix};
use crate::provider::{BraceProvider, ProviderError};
use crate::series::SignalSeries;

pub const SCHEMA_VERSION: u32 = 1;

pub const LINEAR_LABEL: &str = "linear";
pub const CONST_LABEL: &str = "const";

#[derive(Debug, Error)]
pub enum PiSindyError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("series is empty")]
    EmptySeries,
    #[error("training data has no force samples")]
    MissingForces,
    #[error("reference series is constant; NRMSE undefined")]
    DegenerateReference,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unsupported model schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: i64 },
    #[error("malformed model file: {0}")]
    MalformedFile(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Hysteresis(#[from] HysteresisError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// The deployable data-driven substructure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedPiModel {
    pub schema_version: u32,
    /// Number of stop operators.
    pub m: usize,
    /// Training regularisation weight.
    pub lambda: f64,
    /// mm
    pub x_max_train: f64,
    /// Training reconstruction error (dimensionless).
    pub nrmse_train: f64,
    /// kN/mm
    pub linear_weight: f64,
    /// kN
    pub constant: f64,
    /// mm, strictly increasing.
    pub thresholds: Vec<f64>,
    /// kN/mm, one per threshold.
    pub weights: Vec<f64>,
}

impl TrainedPiModel {
    /// Checks the structural invariants of a model.
    pub fn validate(&self) -> Result<(), PiSindyError> {
        let bad = |msg: String| Err(PiSindyError::InvalidModel(msg));
        if self.schema_version != SCHEMA_VERSION {
            return Err(PiSindyError::SchemaVersionMismatch {
                found: self.schema_version.into(),
            });
        }
        if self.thresholds.len() != self.m || self.weights.len() != self.m {
            return bad(format!(
                "m = {} but {} thresholds and {} weights",
                self.m,
                self.thresholds.len(),
                self.weights.len()
            ));
        }
        if !(self.x_max_train > 0.0 && self.x_max_train.is_finite()) {
            return bad(format!("x_max_train = {}", self.x_max_train));
        }
        let scalars = [self.lambda, self.nrmse_train, self.linear_weight, self.constant];
        if scalars.iter().chain(&self.weights).any(|v| !v.is_finite()) {
            return bad("non-finite coefficient".into());
        }
        hysteresis::validate_thresholds(&self.thresholds)?;
        for (i, &r) in self.thresholds.iter().enumerate() {
            let expected = grid_threshold(i + 1, self.m, self.x_max_train);
            if (r - expected).abs() > 1e-12 * expected {
                return bad(format!("threshold {i} is {r}, grid value {expected}"));
            }
        }
        Ok(())
    }

    pub fn pi_def(&self) -> PiModelDef {
        PiModelDef::new(self.thresholds.clone(), self.weights.clone())
            .expect("validated thresholds")
    }

    /// Coefficients in library column order: stop weights, linear, constant.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut xi = self.weights.clone();
        xi.push(self.linear_weight);
        xi.push(self.constant);
        xi
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// Slope of the force at the undeformed state, `linear + Σ ξ_i`.
    pub fn initial_stiffness(&self) -> f64 {
        self.linear_weight + self.weights.iter().sum::<f64>()
    }

    /// Writes the model as a TOML document.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model fields are serialisable")
    }

    /// Parses and validates a TOML model document.
    pub fn from_toml_str(text: &str) -> Result<Self, PiSindyError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| PiSindyError::MalformedFile(e.message().to_string()))?;
        match table.get("schema_version") {
            Some(toml::Value::Integer(v)) if *v == i64::from(SCHEMA_VERSION) => {}
            Some(toml::Value::Integer(v)) => {
                return Err(PiSindyError::SchemaVersionMismatch { found: *v })
            }
            Some(_) => {
                return Err(PiSindyError::MalformedFile(
                    "schema_version is not an integer".into(),
                ))
            }
            None => return Err(PiSindyError::MalformedFile("missing schema_version".into())),
        }
        let model: Self = toml::from_str(text)
            .map_err(|e| PiSindyError::MalformedFile(e.message().to_string()))?;
        model.validate().map_err(|e| match e {
            PiSindyError::InvalidModel(msg) => PiSindyError::MalformedFile(msg),
            PiSindyError::Hysteresis(h) => PiSindyError::MalformedFile(h.to_string()),
            other => other,
        })?;
        Ok(model)
    }
}

pub fn save_model(model: &TrainedPiModel, path: impl AsRef<Path>) -> Result<(), PiSindyError> {
    fs::write(path, model.to_toml_string())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedPiModel, PiSindyError> {
    TrainedPiModel::from_toml_str(&fs::read_to_string(path)?)
}

fn grid_threshold(i: usize, m: usize, x_max: f64) -> f64 {
    i as f64 * x_max / (m + 1) as f64
}

/// `r_i = i/(m+1)·max|x|` for `i = 1..=m`.
pub fn make_thresholds(x: &[f64], m: usize) -> Result<Vec<f64>, PiSindyError> {
    if m == 0 {
        return Err(PiSindyError::DegenerateInput("operator count must be at least 1"));
    }
    let x_max = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(PiSindyError::DegenerateInput("displacement history is identically zero"));
    }
    Ok((1..=m).map(|i| grid_threshold(i, m, x_max)).collect())
}

/// Library `[E_r1[X] … E_rm[X] | X | 1]`, labelled `stop:r=…`, `linear`, `const`.
pub fn build_library(x: &[f64], thresholds: &[f64]) -> Result<LibraryMatrix, PiSindyError> {
    if x.is_empty() {
        return Err(PiSindyError::EmptySeries);
    }
    hysteresis::validate_thresholds(thresholds)?;
    let mut columns = Vec::with_capacity(thresholds.len() + 2);
    let mut labels = Vec::with_capacity(thresholds.len() + 2);
    for &r in thresholds {
        columns.push(hysteresis::stop_evaluate_series(r, x)?);
        labels.push(format!("stop:r={r}"));
    }
    columns.push(x.to_vec());
    labels.push(LINEAR_LABEL.to_string());
    columns.push(vec![1.0; x.len()]);
    labels.push(CONST_LABEL.to_string());
    Ok(LibraryMatrix::new(columns, labels)?)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub lasso: LassoOptions,
}

/// Fits a model with `m` stop operators to displacement/force data.
pub fn train(
    data: &SignalSeries,
    m: usize,
    lambda: f64,
    opts: &TrainOptions,
) -> Result<TrainedPiModel, PiSindyError> {
    let forces = data.forces().ok_or(PiSindyError::MissingForces)?;
    let x = data.x();
    let thresholds = make_thresholds(x, m)?;
    let theta = build_library(x, &thresholds)?;
    let sol = lasso::lasso_solve(&theta, forces, lambda, &opts.lasso)?;
    let mut weights = sol.xi;
    let constant = weights.pop().expect("constant column");
    let linear_weight = weights.pop().expect("linear column");
    let mut model = TrainedPiModel {
        schema_version: SCHEMA_VERSION,
        m,
        lambda,
        x_max_train: data.max_abs_x(),
        nrmse_train: 0.0,
        linear_weight,
        constant,
        thresholds,
        weights,
    };
    let fitted = predict(&model, x)?;
    model.nrmse_train = nrmse(forces, &fitted.forces)?;
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// kN
    pub forces: Vec<f64>,
    /// Fraction of samples with `|x| > x_max_train`.
    pub saturated_fraction: f64,
}

/// Force history for a displacement history; operators start fresh at `x[0]`.
pub fn predict(model: &TrainedPiModel, x: &[f64]) -> Result<PredictionResult, PiSindyError> {
    if x.is_empty() {
        return Err(PiSindyError::EmptySeries);
    }
    let forces = hysteresis::pi_evaluate(&model.pi_def(), x, model.linear_weight, model.constant)?;
    let beyond = x.iter().filter(|v| v.abs() > model.x_max_train).count();
    let saturated_fraction = beyond as f64 / x.len() as f64;
    if beyond > 0 {
        log::warn!(
            "{beyond} of {} samples exceed the training range |x| ≤ {} mm",
            x.len(),
            model.x_max_train
        );
    }
    Ok(PredictionResult {
        forces,
        saturated_fraction,
    })
}

/// Root-mean-square error normalised by the reference range.
pub fn nrmse(reference: &[f64], model: &[f64]) -> Result<f64, PiSindyError> {
    if reference.len() != model.len() {
        return Err(PiSindyError::LengthMismatch(reference.len(), model.len()));
    }
    if reference.len() < 2 {
        return Err(PiSindyError::DegenerateInput("NRMSE needs at least two samples"));
    }
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = (hi - lo).abs();
    if range == 0.0 {
        return Err(PiSindyError::DegenerateReference);
    }
    let sq: f64 = reference
        .iter()
        .zip(model)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / reference.len() as f64).sqrt() / range)
}

/// Sample-by-sample evaluation of a trained model with single-slot rollback.
#[derive(Debug, Clone)]
pub struct PiSession {
    model: TrainedPiModel,
    state: Option<PiState>,
    saved: Option<PiState>,
}

impl PiSession {
    pub fn new(model: TrainedPiModel) -> Self {
        Self {
            model,
            state: None,
            saved: None,
        }
    }

    pub fn model(&self) -> &TrainedPiModel {
        &self.model
    }

    fn force(&self, state: &PiState) -> f64 {
        state.force(&self.model.weights, self.model.linear_weight, self.model.constant)
    }
}

impl BraceProvider for PiSession {
    fn init(&mut self, x0: f64) -> Result<f64, ProviderError> {
        let state = PiState::new(&self.model.thresholds, x0)
            .map_err(|e| ProviderError::Fault(e.to_string()))?;
        let f = self.force(&state);
        self.state = Some(state);
        self.saved = None;
        Ok(f)
    }

    fn step(&mut self, x: f64) -> Result<f64, ProviderError> {
        let mut state = self
            .state
            .take()
            .ok_or(ProviderError::ProtocolMisuse("step before init"))?;
        state.advance_to(x);
        let f = self.force(&state);
        self.state = Some(state);
        Ok(f)
    }

    fn snapshot(&mut self) -> Result<(), ProviderError> {
        let state = self
            .state
            .as_ref()
            .ok_or(ProviderError::ProtocolMisuse("snapshot before init"))?;
        self.saved = Some(state.clone());
        Ok(())
    }

    fn restore(&mut self) -> Result<(), ProviderError> {
        let saved = self
            .saved
            .clone()
            .ok_or(ProviderError::ProtocolMisuse("restore without snapshot"))?;
        self.state = Some(saved);
        Ok(())
    }
}
