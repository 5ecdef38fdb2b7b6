//! Canonical formatting. Output is accepted by [`super::parse`] and parses
//! back to a structurally identical tree with bit-identical constants.

use std::fmt::{self, Display, Formatter, Write};

use super::{Expr, DEFAULT_CLIP_BOUND};

fn write_const(f: &mut Formatter<'_>, v: f64) -> fmt::Result {
    // `Debug` gives the shortest representation that round-trips.
    write!(f, "{v:?}")
}

fn write_group(f: &mut Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        f.write_char('(')?;
        write_expr(f, e)?;
        f.write_char(')')
    } else {
        write_expr(f, e)
    }
}

fn write_expr(f: &mut Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Var => f.write_char('x'),
        Expr::Const(v) => write_const(f, *v),
        Expr::Add(a, b) => {
            write_expr(f, a)?;
            f.write_str(" + ")?;
            write_group(f, b, matches!(**b, Expr::Add(..)))
        }
        Expr::Mul(a, b) => {
            write_group(f, a, matches!(**a, Expr::Add(..)))?;
            f.write_str(" * ")?;
            write_group(f, b, matches!(**b, Expr::Add(..) | Expr::Mul(..)))
        }
        Expr::Neg(a) => {
            f.write_str("-(")?;
            write_expr(f, a)?;
            f.write_char(')')
        }
        Expr::Tanh(a) => {
            f.write_str("tanh(")?;
            write_expr(f, a)?;
            f.write_char(')')
        }
        Expr::Sigmoid(a) => {
            f.write_str("sigmoid(")?;
            write_expr(f, a)?;
            f.write_char(')')
        }
        Expr::Clip(a, bound) => {
            f.write_str("clip(")?;
            write_expr(f, a)?;
            if bound.to_bits() != DEFAULT_CLIP_BOUND.to_bits() {
                f.write_str(", ")?;
                write_const(f, *bound)?;
            }
            f.write_char(')')
        }
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}
