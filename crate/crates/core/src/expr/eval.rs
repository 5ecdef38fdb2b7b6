//! Column-wise evaluation of expression trees.
//!
//! A tree is flattened into a post-order [`Program`]; evaluating it over `n`
//! inputs fills one column of `n` values per node. The filled columns form a
//! [`Tape`], which is all the reverse pass needs to produce exact derivatives
//! with respect to every constant.

use thiserror::Error;

use super::{Expr, NodePath};

#[derive(Debug, Clone, Error, PartialEq)]
#[error("non-finite value {value} at node {path}")]
pub struct EvalError {
    pub path: NodePath,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Var,
    Const(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Tanh(usize),
    Sigmoid(usize),
    Clip(usize, f64),
}

/// Flattened, post-order form of an [`Expr`]. Constants live in a separate
/// slot vector so they can be updated without recompiling.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instr>,
    paths: Vec<NodePath>,
    consts: Vec<f64>,
}

/// Per-node value columns from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    n: usize,
    values: Vec<f64>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Output column of the root node.
    pub fn output(&self) -> &[f64] {
        &self.values[self.values.len() - self.n..]
    }

    fn column(&self, node: usize) -> &[f64] {
        &self.values[node * self.n..(node + 1) * self.n]
    }
}

fn column_mut(buf: &mut [f64], node: usize, n: usize) -> &mut [f64] {
    &mut buf[node * n..(node + 1) * n]
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Program {
    pub fn compile(expr: &Expr) -> Self {
        let mut p = Program {
            instrs: Vec::with_capacity(expr.node_count()),
            paths: Vec::new(),
            consts: Vec::new(),
        };
        let mut path = Vec::new();
        p.emit(expr, &mut path);
        p
    }

    fn emit(&mut self, e: &Expr, path: &mut Vec<u8>) -> usize {
        let child = |p: &mut Program, c: &Expr, i: u8, path: &mut Vec<u8>| {
            path.push(i);
            let slot = p.emit(c, path);
            path.pop();
            slot
        };
        let instr = match e {
            Expr::Var => Instr::Var,
            Expr::Const(v) => {
                self.consts.push(*v);
                Instr::Const(self.consts.len() - 1)
            }
            Expr::Add(a, b) => {
                let l = child(self, a, 0, path);
                let r = child(self, b, 1, path);
                Instr::Add(l, r)
            }
            Expr::Mul(a, b) => {
                let l = child(self, a, 0, path);
                let r = child(self, b, 1, path);
                Instr::Mul(l, r)
            }
            Expr::Neg(a) => Instr::Neg(child(self, a, 0, path)),
            Expr::Tanh(a) => Instr::Tanh(child(self, a, 0, path)),
            Expr::Sigmoid(a) => Instr::Sigmoid(child(self, a, 0, path)),
            Expr::Clip(a, bound) => Instr::Clip(child(self, a, 0, path), *bound),
        };
        self.instrs.push(instr);
        self.paths.push(NodePath(path.clone()));
        self.instrs.len() - 1
    }

    pub fn constants(&self) -> &[f64] {
        &self.consts
    }

    pub fn set_constants(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.consts.len(), "constant count mismatch");
        self.consts.copy_from_slice(values);
    }

    pub fn node_count(&self) -> usize {
        self.instrs.len()
    }

    /// Runs the program over `inputs`, keeping every intermediate column.
    pub fn forward(&self, inputs: &[f64]) -> Result<Tape, EvalError> {
        let n = inputs.len();
        let mut values = vec![0.0; self.instrs.len() * n];
        for (node, instr) in self.instrs.iter().enumerate() {
            let (done, rest) = values.split_at_mut(node * n);
            let out = &mut rest[..n];
            let col = |i: usize| &done[i * n..(i + 1) * n];
            match *instr {
                Instr::Var => out.copy_from_slice(inputs),
                Instr::Const(k) => out.fill(self.consts[k]),
                Instr::Add(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(col(a)).zip(col(b)) {
                        *o = x + y;
                    }
                }
                Instr::Mul(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(col(a)).zip(col(b)) {
                        *o = x * y;
                    }
                }
                Instr::Neg(a) => {
                    for (o, x) in out.iter_mut().zip(col(a)) {
                        *o = -x;
                    }
                }
                Instr::Tanh(a) => {
                    for (o, x) in out.iter_mut().zip(col(a)) {
                        *o = x.tanh();
                    }
                }
                Instr::Sigmoid(a) => {
                    for (o, x) in out.iter_mut().zip(col(a)) {
                        *o = sigmoid(*x);
                    }
                }
                Instr::Clip(a, bound) => {
                    for (o, x) in out.iter_mut().zip(col(a)) {
                        *o = x.max(-bound).min(bound);
                    }
                }
            }
            if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
                return Err(EvalError {
                    path: self.paths[node].clone(),
                    value: *bad,
                });
            }
        }
        Ok(Tape { n, values })
    }

    pub fn evaluate(&self, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
        Ok(self.forward(inputs)?.output().to_vec())
    }

    /// Reverse pass. `output_adjoint[i]` is dL/d(output_i); returns dL/dc for
    /// every constant in left-to-right order.
    ///
    /// Clip passes the adjoint through on the closed interval
    /// `[-bound, bound]` and blocks it outside.
    pub fn backward(&self, tape: &Tape, output_adjoint: &[f64]) -> Vec<f64> {
        let n = tape.n;
        assert_eq!(output_adjoint.len(), n);
        let nodes = self.instrs.len();
        let mut adj = vec![0.0; nodes * n];
        adj[(nodes - 1) * n..].copy_from_slice(output_adjoint);
        let mut grads = vec![0.0; self.consts.len()];
        for node in (0..nodes).rev() {
            let (lower, upper) = adj.split_at_mut(node * n);
            let g = &upper[..n];
            // Every node has exactly one parent, so children are written once.
            match self.instrs[node] {
                Instr::Var => {}
                Instr::Const(k) => grads[k] += g.iter().sum::<f64>(),
                Instr::Add(a, b) => {
                    column_mut(lower, a, n).copy_from_slice(g);
                    column_mut(lower, b, n).copy_from_slice(g);
                }
                Instr::Mul(a, b) => {
                    let (va, vb) = (tape.column(a), tape.column(b));
                    for ((o, gi), v) in column_mut(lower, a, n).iter_mut().zip(g).zip(vb) {
                        *o = gi * v;
                    }
                    for ((o, gi), v) in column_mut(lower, b, n).iter_mut().zip(g).zip(va) {
                        *o = gi * v;
                    }
                }
                Instr::Neg(a) => {
                    for (o, gi) in column_mut(lower, a, n).iter_mut().zip(g) {
                        *o = -gi;
                    }
                }
                Instr::Tanh(a) => {
                    let t = tape.column(node);
                    for ((o, gi), t) in column_mut(lower, a, n).iter_mut().zip(g).zip(t) {
                        *o = gi * (1.0 - t * t);
                    }
                }
                Instr::Sigmoid(a) => {
                    let s = tape.column(node);
                    for ((o, gi), s) in column_mut(lower, a, n).iter_mut().zip(g).zip(s) {
                        *o = gi * s * (1.0 - s);
                    }
                }
                Instr::Clip(a, bound) => {
                    let inner = tape.column(a);
                    for ((o, gi), v) in column_mut(lower, a, n).iter_mut().zip(g).zip(inner) {
                        *o = if v.abs() <= bound { *gi } else { 0.0 };
                    }
                }
            }
        }
        grads
    }
}

/// Element-wise application of `expr` to `inputs`.
pub fn evaluate(expr: &Expr, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
    Program::compile(expr).evaluate(inputs)
}
