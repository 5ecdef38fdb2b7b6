//! Infix grammar:
//!
//! ```text
//! sum     := product ('+' product)*
//! product := unary ('*' unary)*
//! unary   := '-' unary | primary
//! primary := number | 'x' | '(' sum ')'
//!          | ('tanh' | 'sigmoid') '(' sum ')'
//!          | 'clip' '(' sum [',' bound] ')'
//! ```
//!
//! A minus sign directly in front of a numeric literal is folded into the
//! constant, so `-0.522*x` is `Mul(Const(-0.522), Var)`.

use thiserror::Error;

use super::{Expr, DEFAULT_CLIP_BOUND};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    UnknownIdentifier(String),
    MalformedConstant(String),
    InvalidClipBound(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{kind} at byte {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected token {t}"),
            ParseErrorKind::UnexpectedEnd => f.write_str("unexpected end of input"),
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier {s:?}"),
            ParseErrorKind::MalformedConstant(s) => write!(f, "malformed constant {s:?}"),
            ParseErrorKind::InvalidClipBound(s) => write!(f, "invalid clip bound {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Star,
    Minus,
    LParen,
    RParen,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Plus => "'+'".into(),
            Tok::Star => "'*'".into(),
            Tok::Minus => "'-'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b',' => out.push((Tok::Comma, start)),
            b'0'..=b'9' | b'.' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let literal = &text[start..i];
                let value: f64 = literal.parse().map_err(|_| ParseError {
                    kind: ParseErrorKind::MalformedConstant(literal.to_string()),
                    position: start,
                })?;
                if !value.is_finite() {
                    return Err(ParseError {
                        kind: ParseErrorKind::MalformedConstant(literal.to_string()),
                        position: start,
                    });
                }
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    kind: ParseErrorKind::UnexpectedChar(ch),
                    position: start,
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError {
            kind,
            position: self.offset(),
        })
    }

    fn unexpected<T>(&self) -> Result<T, ParseError> {
        match self.peek() {
            Some(t) => self.err(ParseErrorKind::UnexpectedToken(t.describe())),
            None => self.err(ParseErrorKind::UnexpectedEnd),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.unexpected()
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::add(lhs, rhs);
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::mul(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            if let Some(Tok::Num(v)) = self.peek() {
                let v = -*v;
                self.pos += 1;
                return Ok(Expr::Const(v));
            }
            return Ok(Expr::neg(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.err(ParseErrorKind::UnexpectedEnd);
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let at = self.offset();
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(Expr::Var),
                    "tanh" | "sigmoid" | "clip" => {
                        self.expect(Tok::LParen)?;
                        let arg = self.sum()?;
                        let node = match name.as_str() {
                            "tanh" => Expr::tanh(arg),
                            "sigmoid" => Expr::sigmoid(arg),
                            _ => {
                                let bound = if self.peek() == Some(&Tok::Comma) {
                                    self.pos += 1;
                                    self.clip_bound()?
                                } else {
                                    DEFAULT_CLIP_BOUND
                                };
                                Expr::clip_with_bound(arg, bound)
                            }
                        };
                        self.expect(Tok::RParen)?;
                        Ok(node)
                    }
                    _ => Err(ParseError {
                        kind: ParseErrorKind::UnknownIdentifier(name),
                        position: at,
                    }),
                }
            }
            _ => self.unexpected(),
        }
    }

    fn clip_bound(&mut self) -> Result<f64, ParseError> {
        match self.peek() {
            Some(Tok::Num(v)) if *v > 0.0 => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            Some(Tok::Num(v)) => {
                let v = *v;
                self.err(ParseErrorKind::InvalidClipBound(v.to_string()))
            }
            _ => self.unexpected(),
        }
    }
}

/// Parses an expression string. Implicit multiplication (`2x`) and binary
/// subtraction are rejected; write `2*x` and `a + -b`.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return p.unexpected();
    }
    Ok(e)
}
