//! Stop operators and their weighted superposition.
//!
//! A stop operator `E_r` with threshold `r` is the elastic–perfectly-plastic
//! element: its output follows input increments until it reaches `±r`, where
//! it stays clamped until the input reverses. A Prandtl–Ishlinskii model is a
//! weighted sum of stop operators with distinct thresholds.
//!
//! The recursion is applied once per recorded sample, so callers must sample
//! finely enough that the input is effectively monotone between samples.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HysteresisError {
    #[error("stop threshold must be positive and finite, got {0}")]
    NonPositiveThreshold(f64),
    #[error("thresholds must be strictly increasing (violated at index {0})")]
    UnsortedThresholds(usize),
    #[error("{weights} weights given for {thresholds} thresholds")]
    WeightCountMismatch { weights: usize, thresholds: usize },
    #[error("input series is empty")]
    EmptySeries,
}

/// `e_r(s) = min(r, max(-r, s))`.
#[inline]
pub fn clamp_to(r: f64, s: f64) -> f64 {
    r.min((-r).max(s))
}

/// One stop operator: threshold `r` and current output `y`, with `|y| ≤ r`.
///
/// The state is `Copy`; a copy taken before a trial step is a snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopOperator {
    r: f64,
    y: f64,
}

impl StopOperator {
    /// Initial state `y(0) = e_r(x0)`.
    pub fn new(r: f64, x0: f64) -> Result<Self, HysteresisError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(HysteresisError::NonPositiveThreshold(r));
        }
        Ok(Self {
            r,
            y: clamp_to(r, x0),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.r
    }

    pub fn output(&self) -> f64 {
        self.y
    }

    /// State after an input increment `dx`: `y ← e_r(y + dx)`.
    #[inline]
    #[must_use]
    pub fn stepped(self, dx: f64) -> Self {
        Self {
            r: self.r,
            y: clamp_to(self.r, self.y + dx),
        }
    }

    #[inline]
    pub fn advance(&mut self, dx: f64) {
        self.y = clamp_to(self.r, self.y + dx);
    }

    /// Moves the input from `x_prev` to `x`. Equivalent to
    /// `advance(x - x_prev)`, except that an operator whose output equals
    /// `x_prev` takes `x` itself, so virgin loading reproduces the input
    /// without rounding.
    #[inline]
    pub fn advance_from(&mut self, x_prev: f64, x: f64) {
        let s = if self.y == x_prev { x } else { self.y + (x - x_prev) };
        self.y = clamp_to(self.r, s);
    }

    /// Restores a previously observed output, clamped into the band.
    pub fn restore(&mut self, y: f64) {
        self.y = clamp_to(self.r, y);
    }
}

/// Output of `E_r` driven by the displacement samples `xs`.
pub fn stop_evaluate_series(r: f64, xs: &[f64]) -> Result<Vec<f64>, HysteresisError> {
    let (&x0, _) = xs.split_first().ok_or(HysteresisError::EmptySeries)?;
    let mut op = StopOperator::new(r, x0)?;
    let mut out = Vec::with_capacity(xs.len());
    out.push(op.output());
    for w in xs.windows(2) {
        op.advance_from(w[0], w[1]);
        out.push(op.output());
    }
    Ok(out)
}

/// Thresholds and weights of a Prandtl–Ishlinskii model.
#[derive(Debug, Clone, PartialEq)]
pub struct PiModelDef {
    thresholds: Vec<f64>,
    weights: Vec<f64>,
}

impl PiModelDef {
    pub fn new(thresholds: Vec<f64>, weights: Vec<f64>) -> Result<Self, HysteresisError> {
        validate_thresholds(&thresholds)?;
        if weights.len() != thresholds.len() {
            return Err(HysteresisError::WeightCountMismatch {
                weights: weights.len(),
                thresholds: thresholds.len(),
            });
        }
        Ok(Self {
            thresholds,
            weights,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

pub(crate) fn validate_thresholds(thresholds: &[f64]) -> Result<(), HysteresisError> {
    for (i, &r) in thresholds.iter().enumerate() {
        if !(r > 0.0 && r.is_finite()) {
            return Err(HysteresisError::NonPositiveThreshold(r));
        }
        if i > 0 && r <= thresholds[i - 1] {
            return Err(HysteresisError::UnsortedThresholds(i));
        }
    }
    Ok(())
}

/// Running state of a bank of stop operators sharing one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PiState {
    ops: Vec<StopOperator>,
    x: f64,
}

impl PiState {
    /// Every operator initialised at `x0`. Thresholds must already be valid.
    pub fn new(thresholds: &[f64], x0: f64) -> Result<Self, HysteresisError> {
        let ops = thresholds
            .iter()
            .map(|&r| StopOperator::new(r, x0))
            .collect::<Result<_, _>>()?;
        Ok(Self { ops, x: x0 })
    }

    /// Moves the shared input to `x`.
    #[inline]
    pub fn advance_to(&mut self, x: f64) {
        for op in &mut self.ops {
            op.advance_from(self.x, x);
        }
        self.x = x;
    }

    pub fn input(&self) -> f64 {
        self.x
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.ops.iter().map(StopOperator::output)
    }

    /// `Σ ξ_i·y_i + linear·x + constant`, summed in threshold order.
    #[inline]
    pub fn force(&self, weights: &[f64], linear_weight: f64, constant: f64) -> f64 {
        let mut acc = 0.0;
        for (op, w) in self.ops.iter().zip(weights) {
            acc += w * op.output();
        }
        acc + linear_weight * self.x + constant
    }
}

/// Force history of a PI model with appended linear and constant terms.
pub fn pi_evaluate(
    model: &PiModelDef,
    xs: &[f64],
    linear_weight: f64,
    constant: f64,
) -> Result<Vec<f64>, HysteresisError> {
    let (&x0, rest) = xs.split_first().ok_or(HysteresisError::EmptySeries)?;
    let mut state = PiState::new(&model.thresholds, x0)?;
    let mut out = Vec::with_capacity(xs.len());
    out.push(state.force(&model.weights, linear_weight, constant));
    for &x in rest {
        state.advance_to(x);
        out.push(state.force(&model.weights, linear_weight, constant));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_clamps_initial_input() {
        assert_eq!(StopOperator::new(1.0, 0.0).unwrap().output(), 0.0);
        assert_eq!(StopOperator::new(1.0, 2.5).unwrap().output(), 1.0);
        assert_eq!(StopOperator::new(2.0, -0.5).unwrap().output(), -0.5);
    }

    #[test]
    fn init_rejects_bad_threshold() {
        assert_eq!(
            StopOperator::new(0.0, 1.0),
            Err(HysteresisError::NonPositiveThreshold(0.0))
        );
        assert!(StopOperator::new(-1.0, 1.0).is_err());
        assert!(StopOperator::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn step_examples() {
        let op = StopOperator::new(1.0, 0.0).unwrap();
        assert_eq!(op.stepped(2.0).output(), 1.0);
        let loaded = StopOperator { r: 1.0, y: 1.0 };
        assert_eq!(loaded.stepped(-2.0).output(), -1.0);
        assert!((loaded.stepped(-0.4).output() - 0.6).abs() < 1e-15);
        assert_eq!(loaded.stepped(0.0), loaded);
    }

    #[test]
    fn series_hand_recursion() {
        let out = stop_evaluate_series(1.0, &[0.0, 0.5, 1.5, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn wide_threshold_is_identity() {
        let xs = [3.0, -9.5, 10.0, 0.25, -10.0, 7.0];
        assert_eq!(stop_evaluate_series(10.0, &xs).unwrap(), xs.to_vec());
    }

    #[test]
    fn empty_series_rejected() {
        assert_eq!(
            stop_evaluate_series(1.0, &[]),
            Err(HysteresisError::EmptySeries)
        );
        let m = PiModelDef::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(pi_evaluate(&m, &[], 0.0, 0.0), Err(HysteresisError::EmptySeries));
    }

    #[test]
    fn model_def_validation() {
        assert!(PiModelDef::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(PiModelDef::new(vec![2.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(PiModelDef::new(vec![1.0, 2.0], vec![0.0]).is_err());
        assert!(PiModelDef::new(vec![-1.0, 2.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn single_operator_virgin_curve() {
        let m = PiModelDef::new(vec![1.5], vec![40.0]).unwrap();
        let xs: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let f = pi_evaluate(&m, &xs, 0.0, 0.0).unwrap();
        for (x, f) in xs.iter().zip(&f) {
            assert_eq!(*f, 40.0 * x.min(1.5));
        }
    }

    #[test]
    fn pure_linear_spring() {
        let m = PiModelDef::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let xs = [0.0, 3.0, -2.0, 0.5];
        let f = pi_evaluate(&m, &xs, 7.0, 0.0).unwrap();
        for (x, f) in xs.iter().zip(&f) {
            assert_eq!(*f, 7.0 * x);
        }
    }
}
