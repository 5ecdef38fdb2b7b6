//! Evolved scalar replacements for LayerNorm.

pub mod baselines;
pub mod const_opt;
pub mod cost;
pub mod datasets;
pub mod evolve;
pub mod expr;
pub mod fitness;
pub mod report;
pub mod rng;

pub use expr::{parse, Expr};
