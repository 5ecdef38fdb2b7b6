//! Alignment metrics and the composite search objective
//!
//! ```text
//! F = MSE(y, f(x)) + gamma * 1/2 * (f(-delta)^2 + f(delta)^2)
//! ```
//!
//! The anchor term pulls the evolved function toward zero far outside the
//! training range, with `delta = 2 * max|x_train|`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Program, Tape};

pub const DEFAULT_GAMMA: f64 = 0.005;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitnessError {
    #[error("length mismatch: {pred} predictions vs {target} targets")]
    LengthMismatch { pred: usize, target: usize },
    #[error("metric needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("R^2 is undefined for a constant target")]
    ConstantTarget,
    #[error("anchor is degenerate: all training inputs are zero")]
    DegenerateAnchor,
    #[error("invalid fitness parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Search-objective configuration. `delta` overrides the data-driven anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    pub gamma: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Whether validation fitness carries the anchor penalty (true) or is
    /// plain MSE.
    #[serde(default = "default_true")]
    pub validation_includes_penalty: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FitnessConfig {
    fn default() -> Self {
        FitnessConfig {
            gamma: DEFAULT_GAMMA,
            delta: None,
            validation_includes_penalty: true,
        }
    }
}

/// Fully resolved objective weights: `gamma` and the anchor `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessParams {
    pub gamma: f64,
    pub delta: f64,
}

impl FitnessConfig {
    /// Freezes `delta` from the training inputs unless overridden.
    pub fn resolve(&self, train_inputs: &[f64]) -> Result<FitnessParams, FitnessError> {
        let delta = match self.delta {
            Some(d) => d,
            None => anchor_delta(train_inputs)?,
        };
        let params = FitnessParams {
            gamma: self.gamma,
            delta,
        };
        params.check()?;
        Ok(params)
    }

    /// Parameters for scoring held-out data.
    pub fn validation_params(&self, train: FitnessParams) -> FitnessParams {
        if self.validation_includes_penalty {
            train
        } else {
            FitnessParams { gamma: 0.0, ..train }
        }
    }
}

impl FitnessParams {
    pub fn check(&self) -> Result<(), FitnessError> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(FitnessError::InvalidParams(format!("gamma = {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(FitnessError::InvalidParams(format!("delta = {}", self.delta)));
        }
        Ok(())
    }
}

fn check_lengths(pred: &[f64], target: &[f64], needed: usize) -> Result<(), FitnessError> {
    if pred.len() != target.len() {
        return Err(FitnessError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.len() < needed {
        return Err(FitnessError::TooFewSamples {
            needed,
            got: pred.len(),
        });
    }
    Ok(())
}

fn sum_sq_diff(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, FitnessError> {
    check_lengths(pred, target, 1)?;
    Ok(sum_sq_diff(pred, target) / pred.len() as f64)
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the target mean.
pub fn r_squared(pred: &[f64], target: &[f64]) -> Result<f64, FitnessError> {
    check_lengths(pred, target, 2)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(FitnessError::ConstantTarget);
    }
    Ok(1.0 - sum_sq_diff(pred, target) / ss_tot)
}

/// `2 * max|x|` over the training inputs.
pub fn anchor_delta(train_inputs: &[f64]) -> Result<f64, FitnessError> {
    if train_inputs.is_empty() {
        return Err(FitnessError::TooFewSamples { needed: 1, got: 0 });
    }
    let max_abs = train_inputs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return Err(FitnessError::DegenerateAnchor);
    }
    Ok(2.0 * max_abs)
}

/// A dataset packaged for repeated objective evaluation: inputs with the two
/// anchor points `-delta, +delta` appended, so one forward pass covers both
/// terms of the objective.
#[derive(Debug, Clone)]
pub struct Objective {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    params: FitnessParams,
}

impl Objective {
    pub fn new(inputs: &[f64], targets: &[f64], params: FitnessParams) -> Result<Self, FitnessError> {
        check_lengths(inputs, targets, 1)?;
        params.check()?;
        let mut xs = Vec::with_capacity(inputs.len() + 2);
        xs.extend_from_slice(inputs);
        xs.push(-params.delta);
        xs.push(params.delta);
        Ok(Objective {
            inputs: xs,
            targets: targets.to_vec(),
            params,
        })
    }

    pub fn params(&self) -> FitnessParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn data_inputs(&self) -> &[f64] {
        &self.inputs[..self.targets.len()]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn forward(&self, program: &Program) -> Result<Tape, EvalError> {
        program.forward(&self.inputs)
    }

    /// Objective value from a tape produced by [`Objective::forward`].
    pub fn loss_from_tape(&self, tape: &Tape) -> f64 {
        let out = tape.output();
        let n = self.targets.len();
        let mse = sum_sq_diff(&out[..n], &self.targets) / n as f64;
        let (lo, hi) = (out[n], out[n + 1]);
        mse + self.params.gamma * 0.5 * (lo * lo + hi * hi)
    }

    /// Squared-error part only, from the same tape.
    pub fn mse_from_tape(&self, tape: &Tape) -> f64 {
        let n = self.targets.len();
        sum_sq_diff(&tape.output()[..n], &self.targets) / n as f64
    }

    /// dL/d(output) for every row of the extended input column.
    pub fn output_adjoint(&self, tape: &Tape) -> Vec<f64> {
        let out = tape.output();
        let n = self.targets.len();
        let scale = 2.0 / n as f64;
        let mut adj: Vec<f64> = out[..n]
            .iter()
            .zip(&self.targets)
            .map(|(o, t)| scale * (o - t))
            .collect();
        adj.push(self.params.gamma * out[n]);
        adj.push(self.params.gamma * out[n + 1]);
        adj
    }

    pub fn loss(&self, program: &Program) -> Result<f64, EvalError> {
        Ok(self.loss_from_tape(&self.forward(program)?))
    }
}

pub fn composite_fitness(
    expr: &Expr,
    inputs: &[f64],
    targets: &[f64],
    params: FitnessParams,
) -> Result<f64, FitnessError> {
    let objective = Objective::new(inputs, targets, params)?;
    Ok(objective.loss(&Program::compile(expr))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, parse};

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(FitnessError::LengthMismatch { .. })
        ));
        assert!(matches!(mse(&[], &[]), Err(FitnessError::TooFewSamples { .. })));
    }

    #[test]
    fn r_squared_examples() {
        let t = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&[0.0; 4], &t).unwrap(), 0.0);
        let t2 = [1.0, 2.0, 6.0];
        assert!(r_squared(&[3.0; 3], &t2).unwrap().abs() < 1e-15);
        assert_eq!(r_squared(&[1.0, 2.0], &[3.0, 3.0]), Err(FitnessError::ConstantTarget));
        assert!(matches!(
            r_squared(&[1.0], &[1.0]),
            Err(FitnessError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn r_squared_agrees_with_mse_identity() {
        let pred = [0.3, 1.2, -0.7, 2.2, 0.1];
        let target = [0.5, 1.0, -1.0, 2.0, 0.0];
        let mean = target.iter().sum::<f64>() / 5.0;
        let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
        let via_mse = 1.0 - mse(&pred, &target).unwrap() * 5.0 / ss_tot;
        assert!((r_squared(&pred, &target).unwrap() - via_mse).abs() < 1e-14);
    }

    #[test]
    fn anchor_examples() {
        assert_eq!(anchor_delta(&[-3.0, 1.0, 2.0]).unwrap(), 6.0);
        assert_eq!(anchor_delta(&[0.5]).unwrap(), 1.0);
        assert_eq!(anchor_delta(&[0.0, 0.0]), Err(FitnessError::DegenerateAnchor));
        assert!(anchor_delta(&[]).is_err());
    }

    #[test]
    fn composite_examples() {
        let p = FitnessParams { gamma: 0.7, delta: 3.0 };
        assert_eq!(
            composite_fitness(&Expr::Const(0.0), &[1.0, 2.0], &[0.0, 0.0], p).unwrap(),
            0.0
        );

        // f = x on {(x, x)} with max|x| = 1: penalty 0.005 * 0.5 * (4 + 4).
        let xs = [-1.0, -0.5, 0.25, 1.0];
        let params = FitnessConfig::default().resolve(&xs).unwrap();
        assert_eq!(params.delta, 2.0);
        let f = composite_fitness(&Expr::Var, &xs, &xs, params).unwrap();
        assert!((f - 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_gamma_is_exactly_mse() {
        let e = parse("0.5*tanh(2*x) + 0.1").unwrap();
        let xs = [-2.0, -0.3, 0.0, 0.7, 1.9];
        let ys = [-1.0, -0.2, 0.1, 0.5, 0.9];
        let pred = evaluate(&e, &xs).unwrap();
        let params = FitnessParams { gamma: 0.0, delta: 4.0 };
        assert_eq!(
            composite_fitness(&e, &xs, &ys, params).unwrap(),
            mse(&pred, &ys).unwrap()
        );
    }

    #[test]
    fn odd_function_penalty_is_gamma_f_delta_squared() {
        let e = parse("tanh(1.3*x)").unwrap();
        let xs = [-1.0, 0.0, 2.0];
        let ys = evaluate(&e, &xs).unwrap();
        let params = FitnessParams {
            gamma: 0.01,
            delta: 4.0,
        };
        let f = composite_fitness(&e, &xs, &ys, params).unwrap();
        let fd = (1.3f64 * 4.0).tanh();
        assert!((f - 0.01 * fd * fd).abs() < 1e-15);
    }

    #[test]
    fn validation_params_can_drop_the_penalty() {
        let cfg = FitnessConfig {
            validation_includes_penalty: false,
            ..FitnessConfig::default()
        };
        let p = FitnessParams {
            gamma: 0.005,
            delta: 2.0,
        };
        assert_eq!(cfg.validation_params(p).gamma, 0.0);
        assert_eq!(FitnessConfig::default().validation_params(p), p);
    }

    #[test]
    fn explicit_delta_overrides_data() {
        let cfg = FitnessConfig {
            delta: Some(10.0),
            ..FitnessConfig::default()
        };
        assert_eq!(cfg.resolve(&[1.0]).unwrap().delta, 10.0);
        let bad = FitnessConfig {
            gamma: -1.0,
            ..FitnessConfig::default()
        };
        assert!(bad.resolve(&[1.0]).is_err());
    }
}
