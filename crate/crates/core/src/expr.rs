//! Recursive-descent parser for surface component expressions in `u` and `v`.
//!
//! Precedence, tightest first: `^` (right associative, constant exponent),
//! unary `-`, `*` `/`, `+` `-`. Identifiers are `u`, `v`, `pi`, `e` and the
//! functions `sin cos exp log sinh cosh sqrt` applied to a parenthesized
//! argument.

use std::fmt;

use thiserror::Error;

use crate::jets::{Jet2, JetError};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sinh,
    Cosh,
    Sqrt,
}

impl UnaryOp {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sinh" => UnaryOp::Sinh,
            "cosh" => UnaryOp::Cosh,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sinh => "sinh",
            UnaryOp::Cosh => "cosh",
            UnaryOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<ExprAst>),
    Binary(BinaryOp, Box<ExprAst>, Box<ExprAst>),
}

impl ExprAst {
    fn has_var(&self) -> bool {
        match self {
            ExprAst::Const(_) => false,
            ExprAst::Var(_) => true,
            ExprAst::Unary(_, a) => a.has_var(),
            ExprAst::Binary(_, a, b) => a.has_var() || b.has_var(),
        }
    }

    /// Evaluate on jets of the two chart variables.
    pub fn eval_jet(&self, u: &Jet2, v: &Jet2) -> Result<Jet2, JetError> {
        Ok(match self {
            ExprAst::Const(c) => Jet2::constant(*c, u.order().min(v.order())),
            ExprAst::Var(Var::U) => *u,
            ExprAst::Var(Var::V) => *v,
            ExprAst::Unary(op, a) => {
                let a = a.eval_jet(u, v)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log => a.ln()?,
                    UnaryOp::Sinh => a.sinh(),
                    UnaryOp::Cosh => a.cosh(),
                    UnaryOp::Sqrt => a.sqrt()?,
                }
            }
            ExprAst::Binary(op, a, b) => {
                let x = a.eval_jet(u, v)?;
                match op {
                    BinaryOp::Pow => {
                        let r = b.eval(0.0, 0.0)?;
                        x.powf(r)?
                    }
                    _ => {
                        let y = b.eval_jet(u, v)?;
                        match op {
                            BinaryOp::Add => x + y,
                            BinaryOp::Sub => x - y,
                            BinaryOp::Mul => x * y,
                            BinaryOp::Div => x.try_div(&y)?,
                            BinaryOp::Pow => unreachable!(),
                        }
                    }
                }
            }
        })
    }

    pub fn eval(&self, u: f64, v: f64) -> Result<f64, JetError> {
        Ok(self.eval_jet(&Jet2::constant(u, 0), &Jet2::constant(v, 0))?.value())
    }
}

/// Fully parenthesized rendering that reparses to the same tree.
impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprAst::Const(c) => write!(f, "{c:?}"),
            ExprAst::Var(Var::U) => f.write_str("u"),
            ExprAst::Var(Var::V) => f.write_str("v"),
            ExprAst::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            ExprAst::Unary(op, a) => write!(f, "{}({a})", op.name()),
            ExprAst::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut k = i + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    i = k;
                }
            }
            let text = &src[start..i];
            let n: f64 = text.parse().map_err(|_| ParseError {
                offset: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((start, Tok::Num(n)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else {
            return Err(ParseError {
                offset: i,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    /// Extra spelling accepted for `u` (curve expressions use `t`).
    u_alias: Option<&'a str>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<ExprAst, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = ExprAst::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ExprAst, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = ExprAst::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ExprAst, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            let a = self.unary()?;
            return Ok(ExprAst::Unary(UnaryOp::Neg, Box::new(a)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let at = self.offset();
            let exponent = self.unary()?;
            if exponent.has_var() {
                return Err(ParseError {
                    offset: at,
                    message: "exponent must be constant".into(),
                });
            }
            return Ok(ExprAst::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<ExprAst, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            None => self.err("unexpected end of input"),
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(ExprAst::Const(n))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(ParseError {
                        offset,
                        message: "unbalanced parenthesis".into(),
                    }),
                }
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "u" => Ok(ExprAst::Var(Var::U)),
                    "v" => Ok(ExprAst::Var(Var::V)),
                    "pi" => Ok(ExprAst::Const(std::f64::consts::PI)),
                    "e" => Ok(ExprAst::Const(std::f64::consts::E)),
                    n if Some(n) == self.u_alias => Ok(ExprAst::Var(Var::U)),
                    n => match UnaryOp::from_name(n) {
                        Some(op) => {
                            if self.peek() != Some(&Tok::LParen) {
                                return self.err(format!("expected '(' after {n}"));
                            }
                            let arg = self.primary()?;
                            Ok(ExprAst::Unary(op, Box::new(arg)))
                        }
                        None => Err(ParseError {
                            offset,
                            message: format!("unknown identifier '{n}'"),
                        }),
                    },
                }
            }
            Some(Tok::RParen) => self.err("unbalanced parenthesis"),
            Some(Tok::Op(c)) => self.err(format!("unexpected operator '{c}'")),
        }
    }
}

fn parse_with(src: &str, u_alias: Option<&str>) -> Result<ExprAst, ParseError> {
    let toks = lex(src)?;
    if toks.is_empty() {
        return Err(ParseError {
            offset: 0,
            message: "empty input".into(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
        u_alias,
    };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(Tok::RParen) => p.err("unbalanced parenthesis"),
        Some(_) => p.err("unexpected trailing input"),
    }
}

/// Parse an expression in the chart variables `u` and `v`.
pub fn parse_expression(src: &str) -> Result<ExprAst, ParseError> {
    parse_with(src, None)
}

/// Parse a plane-curve component in the parameter `t` (stored as `u`).
pub fn parse_curve_expression(src: &str) -> Result<ExprAst, ParseError> {
    parse_with(src, Some("t"))
}
