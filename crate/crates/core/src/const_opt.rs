//! Exact constant gradients of the composite objective and the short
//! gradient-descent refinement run on every evaluated tree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Program};
use crate::fitness::{FitnessError, FitnessParams, Objective};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GradError {
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite gradient for constant #{index}")]
    NonFinite { index: usize },
}

/// dL/dc for every constant, in left-to-right order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstGradient(pub Vec<f64>);

impl ConstGradient {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn grad_constants(
    expr: &Expr,
    inputs: &[f64],
    targets: &[f64],
    gamma: f64,
    delta: f64,
) -> Result<ConstGradient, GradError> {
    let objective = Objective::new(inputs, targets, FitnessParams { gamma, delta })?;
    let program = Program::compile(expr);
    let (_, grad) = loss_and_gradient(&program, &objective)?;
    Ok(grad)
}

fn loss_and_gradient(program: &Program, objective: &Objective) -> Result<(f64, ConstGradient), GradError> {
    let tape = objective.forward(program)?;
    let grad = program.backward(&tape, &objective.output_adjoint(&tape));
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(GradError::NonFinite { index });
    }
    Ok((objective.loss_from_tape(&tape), ConstGradient(grad)))
}

/// Fixed-step gradient descent with per-step backtracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refiner {
    pub steps: usize,
    pub step_size: f64,
    /// Halvings tried on a step that increases the loss before giving up.
    pub max_halvings: u32,
}

impl Default for Refiner {
    fn default() -> Self {
        Refiner {
            steps: 10,
            step_size: 0.05,
            max_halvings: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub expr: Expr,
    /// Composite objective of `expr` on the refinement data.
    pub fitness: f64,
}

impl Refiner {
    /// Refines the constants of `expr` against `objective`.
    ///
    /// Fails only if the unmodified tree cannot be evaluated. A step that
    /// yields a non-finite loss or gradient stops refinement; a step that
    /// raises the loss is halved up to `max_halvings` times. The returned
    /// fitness never exceeds that of the input tree.
    pub fn refine(&self, expr: &Expr, objective: &Objective) -> Result<Refined, EvalError> {
        let mut program = Program::compile(expr);
        let mut tape = objective.forward(&program)?;
        let initial = objective.loss_from_tape(&tape);
        if self.steps == 0 || program.constants().is_empty() || !initial.is_finite() {
            return Ok(Refined {
                expr: expr.clone(),
                fitness: initial,
            });
        }

        let mut consts = program.constants().to_vec();
        let mut loss = initial;
        'steps: for _ in 0..self.steps {
            let grad = program.backward(&tape, &objective.output_adjoint(&tape));
            if grad.iter().any(|g| !g.is_finite()) {
                break;
            }
            let mut eta = self.step_size;
            for _ in 0..=self.max_halvings {
                let candidate: Vec<f64> = consts.iter().zip(&grad).map(|(c, g)| c - eta * g).collect();
                if candidate.iter().any(|c| !c.is_finite()) {
                    break 'steps;
                }
                program.set_constants(&candidate);
                let Ok(next) = objective.forward(&program) else {
                    break 'steps;
                };
                let next_loss = objective.loss_from_tape(&next);
                if !next_loss.is_finite() {
                    break 'steps;
                }
                if next_loss <= loss {
                    consts = candidate;
                    loss = next_loss;
                    tape = next;
                    continue 'steps;
                }
                eta *= 0.5;
            }
            // every halving still increased the loss
            break;
        }

        if loss <= initial {
            Ok(Refined {
                expr: expr.with_constants(&consts),
                fitness: loss,
            })
        } else {
            Ok(Refined {
                expr: expr.clone(),
                fitness: initial,
            })
        }
    }
}

/// Refines `expr` for `steps` iterations on `(inputs, targets)`.
pub fn refine_constants(
    expr: &Expr,
    inputs: &[f64],
    targets: &[f64],
    params: FitnessParams,
    steps: usize,
    step_size: f64,
) -> Result<Expr, GradError> {
    let objective = Objective::new(inputs, targets, params)?;
    let refiner = Refiner {
        steps,
        step_size,
        ..Refiner::default()
    };
    match refiner.refine(expr, &objective) {
        Ok(r) => Ok(r.expr),
        // Degenerate trees come back unchanged.
        Err(_) => Ok(expr.clone()),
    }
}
