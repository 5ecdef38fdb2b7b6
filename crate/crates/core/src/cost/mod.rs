//! Analytical FLOP and read-traffic model.
//!
//! Every add, sub, mul, div, round-to-integer, exponent-field add and sqrt
//! costs one FLOP. `exp` is priced as range reduction, a Horner-evaluated
//! Maclaurin polynomial of the smallest degree that meets FP32 unit roundoff
//! on `|r| <= ln2/2`, and one exponent-field add. `tanh` and `sigmoid` are a
//! single `exp` plus a few arithmetic ops; `clip` is a compare-and-select and
//! costs nothing.

mod exp;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::layer_name;
use crate::expr::Expr;

pub use exp::{reference_exp, reference_exp_traced, OpTrace, EXP_DOMAIN};

/// FP32 unit roundoff `2^-24`.
pub const UNIT_ROUNDOFF_F32: f64 = 1.0 / 16_777_216.0;

/// Largest `|r|` left by round-to-nearest range reduction.
pub const EXP_HALFWIDTH: f64 = LN_2 / 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("halfwidth {0} outside [0, ln2/2]")]
    HalfwidthOutOfRange(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("expected {expected} layer expressions, got {found}")]
    LayerCountMismatch { expected: usize, found: usize },
    #[error("exp argument {0} outside [-87, 87]")]
    ExpDomain(f64),
    #[error("invalid model shape: {0}")]
    InvalidShape(String),
}

/// Horner evaluation of a degree-`n` polynomial: `n` muls and `n` adds.
pub fn horner_flops(degree: u32) -> u64 {
    2 * degree as u64
}

/// Lagrange bound `sqrt(2) h^(N+1) / (N+1)!` on the degree-`N` Maclaurin
/// remainder of `e^r` for `|r| <= h`. Only valid while `e^h <= sqrt(2)`.
pub fn maclaurin_remainder_bound(halfwidth: f64, degree: u32) -> Result<f64, CostError> {
    if !(0.0..=EXP_HALFWIDTH).contains(&halfwidth) {
        return Err(CostError::HalfwidthOutOfRange(halfwidth));
    }
    // h^(N+1)/(N+1)! accumulated term by term to avoid overflow.
    let mut term = 1.0;
    for k in 1..=degree as u64 + 1 {
        term *= halfwidth / k as f64;
    }
    Ok(std::f64::consts::SQRT_2 * term)
}

/// Smallest degree whose remainder bound is strictly below `tolerance`.
pub fn min_maclaurin_degree(halfwidth: f64, tolerance: f64) -> Result<u32, CostError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(CostError::InvalidTolerance(tolerance));
    }
    let mut n = 0;
    while maclaurin_remainder_bound(halfwidth, n)? >= tolerance {
        n += 1;
    }
    Ok(n)
}

/// Per-primitive prices plus the accuracy target that fixes the exp degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConvention {
    pub add: u64,
    pub mul: u64,
    pub div: u64,
    pub round: u64,
    pub exponent_add: u64,
    pub sqrt: u64,
    pub neg: u64,
    pub clip: u64,
    pub exp_tolerance: f64,
    /// Price `1/sqrt(.)` in LayerNorm as a single reciprocal-square-root op.
    /// The ten listed steps sum to `5d + 3` when priced one by one; fusing
    /// gives the commonly quoted `5d + 2`.
    pub fuse_rsqrt: bool,
}

impl Default for CostConvention {
    fn default() -> Self {
        CostConvention {
            add: 1,
            mul: 1,
            div: 1,
            round: 1,
            exponent_add: 1,
            sqrt: 1,
            neg: 1,
            clip: 0,
            exp_tolerance: UNIT_ROUNDOFF_F32,
            fuse_rsqrt: true,
        }
    }
}

impl CostConvention {
    pub fn with_exp_tolerance(tolerance: f64) -> Self {
        CostConvention {
            exp_tolerance: tolerance,
            ..Self::default()
        }
    }

    pub fn exp_degree(&self) -> Result<u32, CostError> {
        min_maclaurin_degree(EXP_HALFWIDTH, self.exp_tolerance)
    }

    /// `t = x*log2e`, `k = round(t)`, `k*ln2`, `r = x - k*ln2`.
    pub fn exp_range_reduction_flops(&self) -> u64 {
        2 * self.mul + self.round + self.add
    }

    pub fn exp_flops(&self) -> Result<u64, CostError> {
        let n = self.exp_degree()? as u64;
        Ok(self.exp_range_reduction_flops() + n * (self.mul + self.add) + self.exponent_add)
    }

    /// `(e^{2x} - 1) / (e^{2x} + 1)`.
    pub fn tanh_flops(&self) -> Result<u64, CostError> {
        Ok(self.mul + self.exp_flops()? + 2 * self.add + self.div)
    }

    /// `1 / (1 + e^{-x})`.
    pub fn sigmoid_flops(&self) -> Result<u64, CostError> {
        Ok(self.neg + self.exp_flops()? + self.add + self.div)
    }

    /// Price of one scalar evaluation of `expr`.
    pub fn expr_flops(&self, expr: &Expr) -> Result<u64, CostError> {
        let tanh = self.tanh_flops()?;
        let sigmoid = self.sigmoid_flops()?;
        let mut total = 0;
        expr.visit_preorder(&mut |node| {
            total += match node {
                Expr::Var | Expr::Const(_) => 0,
                Expr::Add(..) => self.add,
                Expr::Mul(..) => self.mul,
                Expr::Neg(_) => self.neg,
                Expr::Tanh(_) => tanh,
                Expr::Sigmoid(_) => sigmoid,
                Expr::Clip(..) => self.clip,
            }
        });
        Ok(total)
    }
}

/// A per-token cost `coeff_d * d + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerToken {
    pub coeff_d: u64,
    pub constant: i64,
}

impl PerToken {
    pub fn at(&self, d: u64) -> u64 {
        (self.coeff_d as i64 * d as i64 + self.constant) as u64
    }
}

impl std::ops::Add for PerToken {
    type Output = PerToken;
    fn add(self, o: PerToken) -> PerToken {
        PerToken {
            coeff_d: self.coeff_d + o.coeff_d,
            constant: self.constant + o.constant,
        }
    }
}

impl std::iter::Sum for PerToken {
    fn sum<I: Iterator<Item = PerToken>>(iter: I) -> PerToken {
        iter.fold(PerToken::default(), |a, b| a + b)
    }
}

impl std::fmt::Display for PerToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.constant {
            0 => write!(f, "{}d", self.coeff_d),
            c if c > 0 => write!(f, "{}d + {c}", self.coeff_d),
            c => write!(f, "{}d - {}", self.coeff_d, -c),
        }
    }
}

/// Element-wise expressions cost `d` scalar evaluations per token.
pub fn expr_flops(expr: &Expr, conv: &CostConvention) -> Result<PerToken, CostError> {
    Ok(PerToken {
        coeff_d: conv.expr_flops(expr)?,
        constant: 0,
    })
}

pub fn expr_flops_per_token(expr: &Expr, d: u64) -> u64 {
    expr_flops(expr, &CostConvention::default())
        .expect("default convention is valid")
        .at(d)
}

/// One row of the LayerNorm operation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnStep {
    pub step: String,
    pub operations: String,
    pub flops: PerToken,
}

/// The ten steps of `(x - mu) / sqrt(var + eps)`, affine excluded.
pub fn layernorm_itemization(conv: &CostConvention) -> Vec<LnStep> {
    let row = |step: &str, operations: &str, per_d: u64, constant: i64| LnStep {
        step: step.to_string(),
        operations: operations.to_string(),
        flops: PerToken {
            coeff_d: per_d,
            constant,
        },
    };
    let (a, m, dv, sq) = (conv.add, conv.mul, conv.div, conv.sqrt);
    let ai = a as i64;
    vec![
        row("sum_i x_i", "d - 1 adds", a, -ai),
        row("mu = (.)/d", "1 div", 0, dv as i64),
        row("x'_i = x_i - mu", "d subs", a, 0),
        row("(x'_i)^2", "d muls", m, 0),
        row("sum_i (.)", "d - 1 adds", a, -ai),
        row("var = (.)/d", "1 div", 0, dv as i64),
        row("(.) + eps", "1 add", 0, ai),
        row("sqrt(.)", "1 sqrt", 0, sq as i64),
        if conv.fuse_rsqrt {
            row("1/(.)", "fused with sqrt (rsqrt)", 0, 0)
        } else {
            row("1/(.)", "1 div", 0, dv as i64)
        },
        row("x'_i * (.)", "d muls", m, 0),
    ]
}

pub fn layernorm_flops(conv: &CostConvention) -> PerToken {
    layernorm_itemization(conv).into_iter().map(|s| s.flops).sum()
}

pub fn layernorm_flops_per_token(d: u64) -> u64 {
    layernorm_flops(&CostConvention::default()).at(d)
}

/// `tanh(alpha * x)`: one mul and one tanh per element.
pub fn dyt_flops(conv: &CostConvention) -> Result<PerToken, CostError> {
    Ok(PerToken {
        coeff_d: conv.mul + conv.tanh_flops()?,
        constant: 0,
    })
}

pub fn dyt_flops_per_token(d: u64) -> u64 {
    dyt_flops(&CostConvention::default())
        .expect("default convention is valid")
        .at(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LN")]
    Ln,
    #[serde(rename = "DyT")]
    Dyt,
    #[serde(rename = "GP")]
    Gp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ln, Method::Dyt, Method::Gp];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Ln => "LN",
            Method::Dyt => "DyT",
            Method::Gp => "GP",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ln" | "layernorm" => Ok(Method::Ln),
            "dyt" => Ok(Method::Dyt),
            "gp" => Ok(Method::Gp),
            _ => Err(format!("unknown method {s:?}; expected ln, dyt or gp")),
        }
    }
}

/// LayerNorm reads its input twice (statistics pass, then normalize pass);
/// element-wise replacements read it once.
pub fn memory_read_bytes_per_token(method: Method, d: u64, bytes_per_element: u64) -> u64 {
    let passes = match method {
        Method::Ln => 2,
        Method::Dyt | Method::Gp => 1,
    };
    passes * bytes_per_element * d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub d: u64,
    pub seq_len: u64,
    pub n_layers: usize,
    pub bytes_per_element: u64,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            d: 768,
            seq_len: 197,
            n_layers: 25,
            bytes_per_element: 4,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<(), CostError> {
        if self.d == 0 || self.seq_len == 0 || self.n_layers == 0 || self.bytes_per_element == 0 {
            return Err(CostError::InvalidShape(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MbConvention {
    /// 2^20 bytes.
    #[default]
    Binary,
    /// 10^6 bytes.
    Decimal,
}

impl MbConvention {
    pub fn bytes_per_mb(&self) -> f64 {
        match self {
            MbConvention::Binary => 1_048_576.0,
            MbConvention::Decimal => 1_000_000.0,
        }
    }
}

/// What to price: the two fixed methods, or one expression per layer.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a> {
    Ln,
    Dyt,
    Gp(&'a [(String, Expr)]),
}

impl Candidate<'_> {
    pub fn method(&self) -> Method {
        match self {
            Candidate::Ln => Method::Ln,
            Candidate::Dyt => Method::Dyt,
            Candidate::Gp(_) => Method::Gp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    pub expression: Option<String>,
    pub flops_per_token_coeff_d: u64,
    pub flops_per_token_const: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    /// Per-token cost summed over layers.
    pub per_token: PerToken,
    pub flops: u64,
    pub mflops: f64,
    pub read_bytes: u64,
    pub read_mb: f64,
    pub ratio_vs_ln: f64,
    pub read_ratio_vs_ln: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub method: Method,
    pub shape: ModelShape,
    pub mb_convention: MbConvention,
    /// Output writes are identical across methods and deliberately not modeled.
    pub write_traffic: String,
    pub per_layer: Vec<LayerCost>,
    pub totals: CostTotals,
}

fn totals_for(per_token: PerToken, read_per_token: u64, shape: &ModelShape) -> (u64, u64) {
    (
        shape.seq_len * per_token.at(shape.d),
        shape.seq_len * shape.n_layers as u64 * read_per_token,
    )
}

/// Whole-model budget: `seq_len * sum over layers` of per-token costs.
pub fn aggregate_budget(
    candidate: Candidate<'_>,
    shape: &ModelShape,
    conv: &CostConvention,
    mb: MbConvention,
) -> Result<CostReport, CostError> {
    shape.validate()?;
    let method = candidate.method();
    let per_layer: Vec<LayerCost> = match candidate {
        Candidate::Ln | Candidate::Dyt => {
            let cost = if method == Method::Ln {
                layernorm_flops(conv)
            } else {
                dyt_flops(conv)?
            };
            (0..shape.n_layers)
                .map(|i| LayerCost {
                    layer: layer_name(i, shape.n_layers),
                    expression: None,
                    flops_per_token_coeff_d: cost.coeff_d,
                    flops_per_token_const: cost.constant,
                })
                .collect()
        }
        Candidate::Gp(layers) => {
            if layers.len() != shape.n_layers {
                return Err(CostError::LayerCountMismatch {
                    expected: shape.n_layers,
                    found: layers.len(),
                });
            }
            layers
                .iter()
                .map(|(layer, e)| {
                    let c = expr_flops(e, conv)?;
                    Ok(LayerCost {
                        layer: layer.clone(),
                        expression: Some(e.to_string()),
                        flops_per_token_coeff_d: c.coeff_d,
                        flops_per_token_const: c.constant,
                    })
                })
                .collect::<Result<_, CostError>>()?
        }
    };
    let per_token: PerToken = per_layer
        .iter()
        .map(|l| PerToken {
            coeff_d: l.flops_per_token_coeff_d,
            constant: l.flops_per_token_const,
        })
        .sum();
    let read = memory_read_bytes_per_token(method, shape.d, shape.bytes_per_element);
    let (flops, read_bytes) = totals_for(per_token, read, shape);

    let ln_per_token = PerToken {
        coeff_d: layernorm_flops(conv).coeff_d * shape.n_layers as u64,
        constant: layernorm_flops(conv).constant * shape.n_layers as i64,
    };
    let ln_read = memory_read_bytes_per_token(Method::Ln, shape.d, shape.bytes_per_element);
    let (ln_flops, ln_read_bytes) = totals_for(ln_per_token, ln_read, shape);

    Ok(CostReport {
        method,
        shape: *shape,
        mb_convention: mb,
        write_traffic: "not-applicable".to_string(),
        per_layer,
        totals: CostTotals {
            per_token,
            flops,
            mflops: flops as f64 / 1e6,
            read_bytes,
            read_mb: read_bytes as f64 / mb.bytes_per_mb(),
            ratio_vs_ln: flops as f64 / ln_flops as f64,
            read_ratio_vs_ln: read_bytes as f64 / ln_read_bytes as f64,
        },
    })
}
