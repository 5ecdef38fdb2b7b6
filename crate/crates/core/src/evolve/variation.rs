//! Tree generation, subtree crossover and mixed mutation.
//!
//! Every operator respects the node limit by falling back to the parent.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::GpConfig;
use crate::expr::{Expr, NodeKind};

const UNARY: [NodeKind; 4] = [NodeKind::Neg, NodeKind::Tanh, NodeKind::Sigmoid, NodeKind::Clip];
const FUNCTIONS: [NodeKind; 6] = [
    NodeKind::Add,
    NodeKind::Mul,
    NodeKind::Neg,
    NodeKind::Tanh,
    NodeKind::Sigmoid,
    NodeKind::Clip,
];

/// Depth cap for subtrees grown by subtree-replacement mutation.
const MUTATION_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Subtree,
    Point,
    ConstJitter,
}

/// The variation parameters of a [`GpConfig`].
#[derive(Debug, Clone, Copy)]
pub struct Variation {
    pub max_nodes: usize,
    pub max_init_depth: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub const_range: f64,
    pub var_probability: f64,
    pub clip_bound: f64,
}

impl From<&GpConfig> for Variation {
    fn from(c: &GpConfig) -> Self {
        Variation {
            max_nodes: c.max_nodes,
            max_init_depth: c.max_init_depth,
            crossover_rate: c.crossover_rate,
            mutation_rate: c.mutation_rate,
            const_range: c.const_range,
            var_probability: c.var_probability,
            clip_bound: c.clip_bound,
        }
    }
}

fn build(kind: NodeKind, mut children: Vec<Expr>, clip_bound: f64) -> Expr {
    let mut next = || children.remove(0);
    match kind {
        NodeKind::Add => {
            let a = next();
            Expr::add(a, next())
        }
        NodeKind::Mul => {
            let a = next();
            Expr::mul(a, next())
        }
        NodeKind::Neg => Expr::neg(next()),
        NodeKind::Tanh => Expr::tanh(next()),
        NodeKind::Sigmoid => Expr::sigmoid(next()),
        NodeKind::Clip => Expr::clip_with_bound(next(), clip_bound),
        NodeKind::Var | NodeKind::Const => unreachable!("leaves have no children"),
    }
}

impl Variation {
    pub fn random_leaf(&self, rng: &mut impl Rng) -> Expr {
        if rng.random_bool(self.var_probability) {
            Expr::Var
        } else {
            Expr::Const(rng.random_range(-self.const_range..=self.const_range))
        }
    }

    /// `full` trees put every leaf at exactly `depth`; `grow` trees pick
    /// uniformly among functions and the two terminal kinds until `depth`.
    pub fn random_tree(&self, depth: usize, full: bool, rng: &mut impl Rng) -> Expr {
        if depth <= 1 {
            return self.random_leaf(rng);
        }
        let pick = if full {
            rng.random_range(0..FUNCTIONS.len())
        } else {
            rng.random_range(0..FUNCTIONS.len() + 2)
        };
        if pick >= FUNCTIONS.len() {
            return self.random_leaf(rng);
        }
        let kind = FUNCTIONS[pick];
        let children = (0..kind.arity())
            .map(|_| self.random_tree(depth - 1, full, rng))
            .collect();
        build(kind, children, self.clip_bound)
    }

    /// Ramped half-and-half tree number `index`: depth cycles through
    /// `2..=max_init_depth`, alternating full and grow per cycle.
    pub fn init_tree(&self, index: usize, rng: &mut impl Rng) -> Expr {
        let lo = 2.min(self.max_init_depth);
        let n_depths = self.max_init_depth - lo + 1;
        let depth = lo + index % n_depths;
        let full = (index / n_depths).is_multiple_of(2);
        for _ in 0..16 {
            let t = self.random_tree(depth, full, rng);
            if t.node_count() <= self.max_nodes {
                return t;
            }
        }
        // Tiny node limits: fall back to grown trees, then a leaf.
        for _ in 0..16 {
            let t = self.random_tree(depth, false, rng);
            if t.node_count() <= self.max_nodes {
                return t;
            }
        }
        self.random_leaf(rng)
    }

    /// Swaps uniformly chosen subtrees. A child over the node limit is
    /// replaced by its own parent; two single-leaf parents are returned
    /// unchanged.
    pub fn crossover(&self, a: &Expr, b: &Expr, rng: &mut impl Rng) -> (Expr, Expr) {
        let (na, nb) = (a.node_count(), b.node_count());
        if na == 1 && nb == 1 {
            return (a.clone(), b.clone());
        }
        let ia = rng.random_range(0..na);
        let ib = rng.random_range(0..nb);
        let sa = a.subtree(ia).expect("index in range").clone();
        let sb = b.subtree(ib).expect("index in range").clone();
        let ca = a.replace_subtree(ia, sb).expect("index in range");
        let cb = b.replace_subtree(ib, sa).expect("index in range");
        let ca = if ca.node_count() <= self.max_nodes {
            ca
        } else {
            a.clone()
        };
        let cb = if cb.node_count() <= self.max_nodes {
            cb
        } else {
            b.clone()
        };
        (ca, cb)
    }

    /// Applies one mutation with probability `mutation_rate`.
    pub fn mutate(&self, e: &Expr, rng: &mut impl Rng) -> Expr {
        if self.mutation_rate <= 0.0 || !rng.random_bool(self.mutation_rate.min(1.0)) {
            return e.clone();
        }
        let kind = match rng.random_range(0..3) {
            0 => MutationKind::Subtree,
            1 => MutationKind::Point,
            _ => MutationKind::ConstJitter,
        };
        self.mutate_with(e, kind, rng)
    }

    pub fn mutate_with(&self, e: &Expr, kind: MutationKind, rng: &mut impl Rng) -> Expr {
        let out = match kind {
            MutationKind::Subtree => {
                let i = rng.random_range(0..e.node_count());
                let depth = rng.random_range(1..=MUTATION_DEPTH);
                let t = self.random_tree(depth, false, rng);
                e.replace_subtree(i, t).expect("index in range")
            }
            MutationKind::Point => self.point_mutation(e, rng),
            MutationKind::ConstJitter => {
                let mut consts = e.constants();
                if consts.is_empty() {
                    self.point_mutation(e, rng)
                } else {
                    let i = rng.random_range(0..consts.len());
                    let sigma = 0.1 * (1.0 + consts[i].abs());
                    let step: f64 = Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
                    consts[i] += step;
                    if consts[i].is_finite() {
                        e.with_constants(&consts)
                    } else {
                        e.clone()
                    }
                }
            }
        };
        if out.node_count() <= self.max_nodes {
            out
        } else {
            e.clone()
        }
    }

    /// Swaps one node for another of the same arity.
    fn point_mutation(&self, e: &Expr, rng: &mut impl Rng) -> Expr {
        let i = rng.random_range(0..e.node_count());
        let node = e.subtree(i).expect("index in range");
        let replacement = match node {
            Expr::Var => Expr::Const(rng.random_range(-self.const_range..=self.const_range)),
            Expr::Const(_) => Expr::Var,
            Expr::Add(a, b) => Expr::Mul(a.clone(), b.clone()),
            Expr::Mul(a, b) => Expr::Add(a.clone(), b.clone()),
            Expr::Neg(c) | Expr::Tanh(c) | Expr::Sigmoid(c) | Expr::Clip(c, _) => {
                let others: Vec<NodeKind> = UNARY.iter().copied().filter(|k| *k != node.kind()).collect();
                let kind = others[rng.random_range(0..others.len())];
                build(kind, vec![(**c).clone()], self.clip_bound)
            }
        };
        e.replace_subtree(i, replacement).expect("index in range")
    }
}
