//! Scalar expression trees over the closed operator set
//! `{+, *, neg, tanh, sigmoid, clip}` with the single input `x`.
//!
//! An [`Expr`] is the unit of evolution, evaluation and costing. Trees are
//! plain owned values; every tree built through [`parse`] or the GP operators
//! keeps its constants finite.

mod eval;
mod format;
mod parse;

use std::fmt;

pub use eval::{evaluate, EvalError, Program, Tape};
pub use parse::{parse, ParseError, ParseErrorKind};

/// Saturation bound used by `clip` unless a tree says otherwise.
pub const DEFAULT_CLIP_BOUND: f64 = 5.0;

#[derive(Debug, Clone)]
pub enum Expr {
    Var,
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Tanh(Box<Expr>),
    Sigmoid(Box<Expr>),
    /// `min(max(child, -bound), bound)`.
    Clip(Box<Expr>, f64),
}

/// Operator tag of a single node, independent of its children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Var,
    Const,
    Add,
    Mul,
    Neg,
    Tanh,
    Sigmoid,
    Clip,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::Var,
        NodeKind::Const,
        NodeKind::Add,
        NodeKind::Mul,
        NodeKind::Neg,
        NodeKind::Tanh,
        NodeKind::Sigmoid,
        NodeKind::Clip,
    ];

    pub fn arity(self) -> usize {
        match self {
            NodeKind::Var | NodeKind::Const => 0,
            NodeKind::Neg | NodeKind::Tanh | NodeKind::Sigmoid | NodeKind::Clip => 1,
            NodeKind::Add | NodeKind::Mul => 2,
        }
    }
}

/// Child-index path from the root to a node; the root is the empty path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NodePath(pub Vec<u8>);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for step in &self.0 {
            write!(f, "/{step}")?;
        }
        Ok(())
    }
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Expr) -> Self {
        Expr::Neg(Box::new(a))
    }

    pub fn tanh(a: Expr) -> Self {
        Expr::Tanh(Box::new(a))
    }

    pub fn sigmoid(a: Expr) -> Self {
        Expr::Sigmoid(Box::new(a))
    }

    pub fn clip(a: Expr) -> Self {
        Expr::Clip(Box::new(a), DEFAULT_CLIP_BOUND)
    }

    pub fn clip_with_bound(a: Expr, bound: f64) -> Self {
        Expr::Clip(Box::new(a), bound)
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            Expr::Var => NodeKind::Var,
            Expr::Const(_) => NodeKind::Const,
            Expr::Add(..) => NodeKind::Add,
            Expr::Mul(..) => NodeKind::Mul,
            Expr::Neg(_) => NodeKind::Neg,
            Expr::Tanh(_) => NodeKind::Tanh,
            Expr::Sigmoid(_) => NodeKind::Sigmoid,
            Expr::Clip(..) => NodeKind::Clip,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Var | Expr::Const(_) => Vec::new(),
            Expr::Add(a, b) | Expr::Mul(a, b) => vec![a, b],
            Expr::Neg(a) | Expr::Tanh(a) | Expr::Sigmoid(a) | Expr::Clip(a, _) => vec![a],
        }
    }

    fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Var | Expr::Const(_) => Vec::new(),
            Expr::Add(a, b) | Expr::Mul(a, b) => vec![a, b],
            Expr::Neg(a) | Expr::Tanh(a) | Expr::Sigmoid(a) | Expr::Clip(a, _) => vec![a],
        }
    }

    /// Total number of nodes, leaves included.
    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(Expr::node_count).sum::<usize>()
    }

    /// Leaf depth is 1.
    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Expr::depth).max().unwrap_or(0)
    }

    /// Constant values in left-to-right (pre-order) order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_preorder(&mut |e| {
            if let Expr::Const(v) = e {
                out.push(*v);
            }
        });
        out
    }

    pub fn const_count(&self) -> usize {
        self.constants().len()
    }

    /// Returns a copy with the constants replaced, in the order of
    /// [`Expr::constants`].
    ///
    /// # Panics
    /// If `values` does not have exactly one entry per constant.
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut out = self.clone();
        let mut it = values.iter();
        out.visit_preorder_mut(&mut |e| {
            if let Expr::Const(v) = e {
                *v = *it.next().expect("too few constant values");
            }
        });
        assert!(it.next().is_none(), "too many constant values");
        out
    }

    pub fn visit_preorder<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.visit_preorder(f);
        }
    }

    fn visit_preorder_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        for c in self.children_mut() {
            c.visit_preorder_mut(f);
        }
    }

    /// Node at pre-order index `index` (root = 0).
    pub fn subtree(&self, index: usize) -> Option<&Expr> {
        let mut remaining = index;
        self.find_preorder(&mut remaining)
    }

    fn find_preorder(&self, remaining: &mut usize) -> Option<&Expr> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        for c in self.children() {
            if let Some(found) = c.find_preorder(remaining) {
                return Some(found);
            }
        }
        None
    }

    fn find_preorder_mut(&mut self, remaining: &mut usize) -> Option<&mut Expr> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        for c in self.children_mut() {
            if let Some(found) = c.find_preorder_mut(remaining) {
                return Some(found);
            }
        }
        None
    }

    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut Expr> {
        let mut remaining = index;
        self.find_preorder_mut(&mut remaining)
    }

    /// Copy of `self` with the subtree at pre-order `index` swapped for
    /// `replacement`. Returns `None` if the index is out of range.
    pub fn replace_subtree(&self, index: usize, replacement: Expr) -> Option<Expr> {
        let mut out = self.clone();
        *out.subtree_mut(index)? = replacement;
        Some(out)
    }

    /// Pre-order indices of all nodes with the given kind.
    pub fn indices_of(&self, kind: NodeKind) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        self.visit_preorder(&mut |e| {
            if e.kind() == kind {
                out.push(i);
            }
            i += 1;
        });
        out
    }

    /// Checks the construction invariants: finite constants, finite positive
    /// clip bounds.
    pub fn validate(&self) -> Result<(), String> {
        let mut err = None;
        self.visit_preorder(&mut |e| match e {
            Expr::Const(v) if !v.is_finite() && err.is_none() => {
                err = Some(format!("non-finite constant {v}"));
            }
            Expr::Clip(_, b) if !(b.is_finite() && *b > 0.0) && err.is_none() => {
                err = Some(format!("invalid clip bound {b}"));
            }
            _ => {}
        });
        err.map_or(Ok(()), Err)
    }

    /// Evaluates at a single point.
    pub fn eval_scalar(&self, x: f64) -> Result<f64, EvalError> {
        evaluate(self, &[x]).map(|v| v[0])
    }
}

/// Structural equality with bitwise comparison of constants and clip bounds.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Expr::Var, Expr::Var) => true,
            (Expr::Const(a), Expr::Const(b)) => a.to_bits() == b.to_bits(),
            (Expr::Add(a1, b1), Expr::Add(a2, b2)) | (Expr::Mul(a1, b1), Expr::Mul(a2, b2)) => a1 == a2 && b1 == b2,
            (Expr::Neg(a), Expr::Neg(b)) | (Expr::Tanh(a), Expr::Tanh(b)) | (Expr::Sigmoid(a), Expr::Sigmoid(b)) => {
                a == b
            }
            (Expr::Clip(a, ba), Expr::Clip(b, bb)) => ba.to_bits() == bb.to_bits() && a == b,
            _ => false,
        }
    }
}

impl Eq for Expr {}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_count_examples() {
        assert_eq!(Expr::Var.node_count(), 1);
        assert_eq!(Expr::add(Expr::Var, Expr::Const(1.0)).node_count(), 3);
        let e = parse("-0.522*x + 2.11*clip(x)").unwrap();
        assert_eq!(e.node_count(), 8);
    }

    #[test]
    fn depth_examples() {
        assert_eq!(Expr::Var.depth(), 1);
        let e = Expr::tanh(Expr::tanh(Expr::tanh(Expr::Var)));
        assert_eq!(e.depth(), 4);
    }

    #[test]
    fn subtree_indexing_is_preorder() {
        let e = parse("tanh(x)+tanh(x+0.27)").unwrap();
        assert_eq!(e.subtree(0).unwrap().kind(), NodeKind::Add);
        assert_eq!(e.subtree(1).unwrap().kind(), NodeKind::Tanh);
        assert_eq!(e.subtree(2).unwrap().kind(), NodeKind::Var);
        assert_eq!(e.subtree(3).unwrap().kind(), NodeKind::Tanh);
        assert_eq!(e.subtree(5).unwrap(), &Expr::Var);
        assert_eq!(e.subtree(6).unwrap(), &Expr::Const(0.27));
        assert!(e.subtree(7).is_none());
    }

    #[test]
    fn replace_subtree_swaps_in_place() {
        let e = parse("x*tanh(x)").unwrap();
        let r = e.replace_subtree(2, Expr::Const(1.5)).unwrap();
        assert_eq!(r, parse("x*1.5").unwrap());
        assert!(e.replace_subtree(9, Expr::Var).is_none());
    }

    #[test]
    fn constants_round_trip_through_with_constants() {
        let e = parse("0.698*clip(2.31*x) + 1").unwrap();
        assert_eq!(e.constants(), vec![0.698, 2.31, 1.0]);
        let f = e.with_constants(&[1.0, 2.0, 3.0]);
        assert_eq!(f, parse("1*clip(2*x) + 3").unwrap());
    }

    #[test]
    fn validate_flags_bad_constants() {
        assert!(Expr::Const(f64::NAN).validate().is_err());
        assert!(Expr::clip_with_bound(Expr::Var, -1.0).validate().is_err());
        assert!(parse("clip(x)").unwrap().validate().is_ok());
    }

    #[test]
    fn equality_distinguishes_signed_zero() {
        assert_ne!(Expr::Const(0.0), Expr::Const(-0.0));
    }
}
