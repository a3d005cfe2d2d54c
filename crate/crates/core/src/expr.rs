//! Scalar expressions in the chart variables `x1..xn`: parsing, evaluation and
//! exact symbolic partial derivatives.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ['^' int]
//! atom   := number | 'x' int | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | log | sqrt
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`. Exponents are
//! integer literals (optionally negative) and chain to the right.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{EvalError, EvalErrorKind, ExprError};
use crate::grassmann::{parse_labels, scan_number};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Expression tree. Variables are stored 0-based (`Var(0)` is `x1`).
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Const(f64),
    Var(usize),
    Add(Box<ScalarExpr>, Box<ScalarExpr>),
    Sub(Box<ScalarExpr>, Box<ScalarExpr>),
    Mul(Box<ScalarExpr>, Box<ScalarExpr>),
    Div(Box<ScalarExpr>, Box<ScalarExpr>),
    Pow(Box<ScalarExpr>, i32),
    Neg(Box<ScalarExpr>),
    Call(Func, Box<ScalarExpr>),
}

use ScalarExpr::*;

impl ScalarExpr {
    pub fn zero() -> Self {
        Const(0.0)
    }

    pub fn one() -> Self {
        Const(1.0)
    }

    /// `x_{i+1}`.
    pub fn var(i: usize) -> Self {
        Var(i)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Const(c) if *c == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn parse(src: &str, n: usize) -> Result<ScalarExpr, ExprError> {
        let mut p = Parser::new(src, n)?;
        let e = p.expr()?;
        p.expect_end()?;
        Ok(e)
    }

    /// Largest 0-based variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Const(_) => None,
            Var(i) => Some(*i),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.max_var().max(b.max_var()),
            Pow(a, _) | Neg(a) | Call(_, a) => a.max_var(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let fail = |kind| Err(EvalError { kind, expr: self.to_string() });
        let v = match self {
            Const(c) => *c,
            Var(i) => match x.get(*i) {
                Some(v) => *v,
                None => return fail(EvalErrorKind::WrongArity),
            },
            Add(a, b) => a.eval(x)? + b.eval(x)?,
            Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return fail(EvalErrorKind::DivisionByZero);
                }
                a.eval(x)? / d
            }
            Pow(a, k) => {
                let base = a.eval(x)?;
                if base == 0.0 && *k < 0 {
                    return fail(EvalErrorKind::DivisionByZero);
                }
                base.powi(*k)
            }
            Neg(a) => -a.eval(x)?,
            Call(f, a) => {
                let arg = a.eval(x)?;
                match f {
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Exp => arg.exp(),
                    Func::Log => {
                        if arg <= 0.0 {
                            return fail(EvalErrorKind::LogDomain);
                        }
                        arg.ln()
                    }
                    Func::Sqrt => {
                        if arg < 0.0 {
                            return fail(EvalErrorKind::SqrtDomain);
                        }
                        arg.sqrt()
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            fail(EvalErrorKind::NonFinite)
        }
    }

    /// Exact partial derivative with respect to `Var(i)` (0-based).
    pub fn diff(&self, i: usize) -> ScalarExpr {
        match self {
            Const(_) => Const(0.0),
            Var(j) => Const(if *j == i { 1.0 } else { 0.0 }),
            Add(a, b) => a.diff(i) + b.diff(i),
            Sub(a, b) => a.diff(i) - b.diff(i),
            Mul(a, b) => a.diff(i) * (**b).clone() + (**a).clone() * b.diff(i),
            Div(a, b) => {
                let num = a.diff(i) * (**b).clone() - (**a).clone() * b.diff(i);
                num / pow((**b).clone(), 2)
            }
            Pow(a, k) => {
                if *k == 0 {
                    Const(0.0)
                } else {
                    Const(*k as f64) * pow((**a).clone(), k - 1) * a.diff(i)
                }
            }
            Neg(a) => -a.diff(i),
            Call(f, a) => {
                let inner = a.diff(i);
                if inner.is_zero() {
                    return Const(0.0);
                }
                let arg = (**a).clone();
                match f {
                    Func::Sin => call(Func::Cos, arg) * inner,
                    Func::Cos => -(call(Func::Sin, arg) * inner),
                    Func::Exp => call(Func::Exp, arg) * inner,
                    Func::Log => inner / arg,
                    Func::Sqrt => inner / (Const(2.0) * call(Func::Sqrt, arg)),
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Add(..) | Sub(..) => 1,
            Mul(..) | Div(..) => 2,
            Neg(_) => 3,
            Const(c) if c.is_sign_negative() => 5, // rendered parenthesized
            Pow(..) => 4,
            _ => 5,
        }
    }

    fn render(&self, out: &mut String, min_prec: u8) {
        let prec = self.precedence();
        let wrap = prec < min_prec;
        if wrap {
            out.push('(');
        }
        match self {
            Const(c) => {
                if c.is_sign_negative() {
                    out.push_str(&format!("(-{})", -c));
                } else {
                    out.push_str(&format!("{c}"));
                }
            }
            Var(i) => out.push_str(&format!("x{}", i + 1)),
            Add(a, b) | Sub(a, b) => {
                a.render(out, 1);
                out.push_str(if matches!(self, Add(..)) { " + " } else { " - " });
                b.render(out, 2);
            }
            Mul(a, b) | Div(a, b) => {
                a.render(out, 2);
                out.push(if matches!(self, Mul(..)) { '*' } else { '/' });
                b.render(out, 3);
            }
            Neg(a) => {
                out.push('-');
                a.render(out, 3);
            }
            Pow(a, k) => {
                a.render(out, 5);
                out.push_str(&format!("^{k}"));
            }
            Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.render(out, 0);
                out.push(')');
            }
        }
        if wrap {
            out.push(')');
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render(&mut s, 0);
        f.write_str(&s)
    }
}

fn pow(a: ScalarExpr, k: i32) -> ScalarExpr {
    match (a, k) {
        (_, 0) => Const(1.0),
        (a, 1) => a,
        (Const(c), k) => Const(c.powi(k)),
        (a, k) => Pow(Box::new(a), k),
    }
}

fn call(f: Func, a: ScalarExpr) -> ScalarExpr {
    Call(f, Box::new(a))
}

impl Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: ScalarExpr) -> ScalarExpr {
        match (self, rhs) {
            (Const(a), Const(b)) => Const(a + b),
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => b,
            (a, b) => Add(Box::new(a), Box::new(b)),
        }
    }
}

impl Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: ScalarExpr) -> ScalarExpr {
        match (self, rhs) {
            (Const(a), Const(b)) => Const(a - b),
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => -b,
            (a, b) => Sub(Box::new(a), Box::new(b)),
        }
    }
}

impl Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: ScalarExpr) -> ScalarExpr {
        match (self, rhs) {
            (Const(a), Const(b)) => Const(a * b),
            (a, b) if a.is_zero() || b.is_zero() => Const(0.0),
            (Const(1.0), b) => b,
            (a, Const(1.0)) => a,
            (Const(-1.0), b) => -b,
            (a, b) => Mul(Box::new(a), Box::new(b)),
        }
    }
}

impl Div for ScalarExpr {
    type Output = ScalarExpr;
    fn div(self, rhs: ScalarExpr) -> ScalarExpr {
        match (self, rhs) {
            (Const(a), Const(b)) if b != 0.0 => Const(a / b),
            (a, _) if a.is_zero() => Const(0.0),
            (a, Const(1.0)) => a,
            (a, b) => Div(Box::new(a), Box::new(b)),
        }
    }
}

impl Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        match self {
            Const(c) => Const(-c),
            Neg(a) => *a,
            a => Neg(Box::new(a)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Var(usize),
    Func(Func),
    Basis(Vec<usize>),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

pub(crate) struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    n: usize,
}

impl Parser {
    pub(crate) fn new(src: &str, n: usize) -> Result<Self, ExprError> {
        Ok(Parser { toks: lex(src)?, at: 0, n })
    }

    pub(crate) fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    pub(crate) fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].0
    }

    pub(crate) fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    pub(crate) fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub(crate) fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax { pos: self.pos(), message: message.to_string() }
    }

    pub(crate) fn expect_end(&self) -> Result<(), ExprError> {
        if *self.peek() == Tok::End {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    pub(crate) fn expr(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    /// Stops before `'*' e[...]` so superfunction syntax can reuse it.
    pub(crate) fn term(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match (self.peek(), self.peek2()) {
                (Tok::Star, Tok::Basis(_)) => return Ok(lhs),
                (Tok::Star, _) => {
                    self.bump();
                    lhs = Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                (Tok::Slash, _) => {
                    self.bump();
                    lhs = Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<ScalarExpr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(match self.unary()? {
                // literal folding keeps `(-2)` a constant
                Const(c) => Const(-c),
                e => Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<ScalarExpr, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let k = self.exponent()?;
            return Ok(Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ExprError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let pos = self.pos();
        let k = match self.bump() {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => v as i32,
            _ => return Err(ExprError::Syntax { pos, message: "exponent must be an integer literal".into() }),
        };
        let k = if neg { -k } else { k };
        if *self.peek() == Tok::Caret {
            self.bump();
            let outer = self.exponent()?;
            if outer < 0 {
                return Err(self.error("negative exponent in chained power"));
            }
            return k.checked_pow(outer as u32).ok_or_else(|| self.error("exponent overflow"));
        }
        Ok(k)
    }

    fn atom(&mut self) -> Result<ScalarExpr, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Const(v)),
            Tok::Var(i) => {
                if i == 0 || i > self.n {
                    Err(ExprError::VariableOutOfRange { index: i, n: self.n })
                } else {
                    Ok(Var(i - 1))
                }
            }
            Tok::Func(f) => {
                if self.bump() != Tok::LParen {
                    return Err(ExprError::Syntax { pos, message: format!("expected '(' after {}", f.name()) });
                }
                let arg = self.expr()?;
                if self.bump() != Tok::RParen {
                    return Err(ExprError::Syntax { pos, message: "unclosed function call".into() });
                }
                Ok(Call(f, Box::new(arg)))
            }
            Tok::LParen => {
                let e = self.expr()?;
                if self.bump() != Tok::RParen {
                    return Err(ExprError::Syntax { pos, message: "unbalanced '('".into() });
                }
                Ok(e)
            }
            Tok::Basis(_) => Err(ExprError::Syntax { pos, message: "odd generator not allowed here".into() }),
            Tok::End => Err(ExprError::Syntax { pos, message: "unexpected end of input".into() }),
            _ => Err(ExprError::Syntax { pos, message: "unexpected token".into() }),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        if c.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        let start = pos;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                pos = scan_number(bytes, pos);
                let v = src[start..pos].parse::<f64>().map_err(|_| ExprError::Syntax {
                    pos: start,
                    message: format!("bad number '{}'", &src[start..pos]),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while pos < bytes.len() && bytes[pos].is_ascii_alphanumeric() {
                    pos += 1;
                }
                let word = &src[start..pos];
                if word == "e" && pos < bytes.len() && bytes[pos] == b'[' {
                    let close = src[pos..]
                        .find(']')
                        .map(|k| pos + k)
                        .ok_or(ExprError::Syntax { pos: start, message: "unclosed '['".into() })?;
                    let labels = parse_labels(&src[pos + 1..close])
                        .map_err(|message| ExprError::Syntax { pos: pos + 1, message })?;
                    pos = close + 1;
                    out.push((Tok::Basis(labels), start));
                    continue;
                }
                let tok = if let Some(f) = Func::from_name(word) {
                    Tok::Func(f)
                } else if word.len() > 1 && word.starts_with('x') && word[1..].bytes().all(|b| b.is_ascii_digit()) {
                    Tok::Var(
                        word[1..]
                            .parse()
                            .map_err(|_| ExprError::UnknownIdentifier { pos: start, name: word.to_string() })?,
                    )
                } else {
                    return Err(ExprError::UnknownIdentifier { pos: start, name: word.to_string() });
                };
                out.push((tok, start));
                continue;
            }
            _ => {
                return Err(ExprError::Syntax { pos, message: format!("unexpected character '{}'", c as char) });
            }
        };
        out.push((tok, start));
        pos += 1;
    }
    out.push((Tok::End, bytes.len()));
    Ok(out)
}
