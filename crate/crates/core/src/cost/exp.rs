//! `exp` computed exactly the way the cost model prices it.

use std::f64::consts::{LN_2, LOG2_E};

use super::CostError;

/// FP32 `exp` neither overflows nor goes subnormal inside `[-87, 87]`.
pub const EXP_DOMAIN: f64 = 87.0;

/// 1/k! for k = 0..=7.
const MACLAURIN7: [f64; 8] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
];

/// Counts of each priced operation performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpTrace {
    pub add: u32,
    pub mul: u32,
    pub round: u32,
    pub exponent_add: u32,
}

impl OpTrace {
    pub fn total(&self) -> u32 {
        self.add + self.mul + self.round + self.exponent_add
    }
}

/// `2^k * E7(r)` with `k = round(x log2 e)`, `r = x - k ln2`, recording every
/// arithmetic step in `trace`.
pub fn reference_exp_traced(x: f64, trace: &mut OpTrace) -> Result<f64, CostError> {
    if !(-EXP_DOMAIN..=EXP_DOMAIN).contains(&x) {
        return Err(CostError::ExpDomain(x));
    }
    // range reduction
    let t = x * LOG2_E;
    trace.mul += 1;
    let k = t.round();
    trace.round += 1;
    let kl = k * LN_2;
    trace.mul += 1;
    let r = x - kl;
    trace.add += 1;

    // Horner, degree 7
    let mut p = MACLAURIN7[7];
    for &c in MACLAURIN7[..7].iter().rev() {
        p *= r;
        trace.mul += 1;
        p += c;
        trace.add += 1;
    }

    // 2^k by adding k to the exponent field; p is in (0.7, 1.5) so the
    // shifted exponent stays normal for |k| <= 126.
    let bits = p.to_bits() as i64 + ((k as i64) << 52);
    trace.exponent_add += 1;
    Ok(f64::from_bits(bits as u64))
}

pub fn reference_exp(x: f64) -> Result<f64, CostError> {
    reference_exp_traced(x, &mut OpTrace::default())
}
