//! Expression DSL for the entries of `A_θ(t)` and `r_θ(t)`.
//!
//! Grammar (ASCII, whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' exponent)?          exponent: optionally signed numeric literal
//! atom   := number | 't' | 'theta' '[' int ']' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp'
//! ```
//!
//! Parameters are 1-based in the source text (`theta[1]` is the first one) and
//! 0-based once parsed. Evaluation is forward-mode: every node carries its value
//! and its gradient with respect to θ.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    /// 0-based parameter index.
    Param(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Const(_) | Expr::Param(_) => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.depends_on_time(),
            Expr::Binary(_, a, b) => a.depends_on_time() || b.depends_on_time(),
        }
    }

    /// Largest 0-based parameter index referenced, if any.
    pub fn max_param(&self) -> Option<usize> {
        match self {
            Expr::Param(k) => Some(*k),
            Expr::Const(_) | Expr::Time => None,
            Expr::Neg(e) | Expr::Call(_, e) => e.max_param(),
            Expr::Binary(_, a, b) => match (a.max_param(), b.max_param()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Plain value evaluation (no derivatives).
    pub fn eval(&self, t: f64, theta: &[f64]) -> Result<f64> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Time => t,
            Expr::Param(k) => theta[*k],
            Expr::Neg(e) => -e.eval(t, theta)?,
            Expr::Call(f, e) => {
                let x = e.eval(t, theta)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(t, theta)?;
                let y = b.eval(t, theta)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(Error::NonFinite {
                                what: "division by zero",
                                entry: vec![],
                                t,
                            });
                        }
                        x / y
                    }
                    BinOp::Pow => pow_checked(x, y, t)?,
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                what: "expression",
                entry: vec![],
                t,
            })
        }
    }

    /// Flatten into a postfix tape for allocation-free repeated evaluation.
    pub fn compile(&self) -> Tape {
        let mut ops = Vec::new();
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        self.emit(&mut ops, &mut depth, &mut max_depth);
        Tape {
            ops,
            max_depth,
            time_dependent: self.depends_on_time(),
            zero: self.is_zero(),
        }
    }

    fn emit(&self, ops: &mut Vec<Op>, depth: &mut usize, max_depth: &mut usize) {
        let mut push = |ops: &mut Vec<Op>, op: Op, depth: &mut usize| {
            ops.push(op);
            *depth += 1;
            *max_depth = (*max_depth).max(*depth);
        };
        match self {
            Expr::Const(c) => push(ops, Op::Const(*c), depth),
            Expr::Time => push(ops, Op::Time, depth),
            Expr::Param(k) => push(ops, Op::Param(*k), depth),
            Expr::Neg(e) => {
                e.emit(ops, depth, max_depth);
                ops.push(Op::Neg);
            }
            Expr::Call(f, e) => {
                e.emit(ops, depth, max_depth);
                ops.push(match f {
                    Func::Sin => Op::Sin,
                    Func::Cos => Op::Cos,
                    Func::Exp => Op::Exp,
                });
            }
            Expr::Binary(BinOp::Pow, a, b) => {
                a.emit(ops, depth, max_depth);
                let c = match b.as_ref() {
                    Expr::Const(c) => *c,
                    Expr::Neg(inner) => match inner.as_ref() {
                        Expr::Const(c) => -*c,
                        _ => unreachable!("parser only admits constant exponents"),
                    },
                    _ => unreachable!("parser only admits constant exponents"),
                };
                ops.push(Op::PowConst(c));
            }
            Expr::Binary(op, a, b) => {
                a.emit(ops, depth, max_depth);
                b.emit(ops, depth, max_depth);
                *depth -= 1;
                ops.push(match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div,
                    BinOp::Pow => unreachable!(),
                });
            }
        }
    }
}

fn pow_checked(base: f64, exponent: f64, t: f64) -> Result<f64> {
    if exponent.fract() == 0.0 && exponent.abs() < i32::MAX as f64 {
        Ok(base.powi(exponent as i32))
    } else if base > 0.0 {
        Ok(base.powf(exponent))
    } else {
        Err(Error::NonFinite {
            what: "non-integer power of a non-positive base",
            entry: vec![],
            t,
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Time => write!(f, "t"),
            Expr::Param(k) => write!(f, "theta[{}]", k + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Call(func, e) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                };
                write!(f, "{name}({e})")
            }
            Expr::Binary(BinOp::Pow, a, b) => {
                let c = b.eval(0.0, &[]).unwrap_or(f64::NAN);
                write!(f, "({a} ^ {c:?})")
            }
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Time,
    Param(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowConst(f64),
    Sin,
    Cos,
    Exp,
}

/// Compiled postfix form of an [`Expr`].
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    max_depth: usize,
    time_dependent: bool,
    zero: bool,
}

/// Reusable evaluation stacks for [`Tape::eval_dual`].
#[derive(Debug, Default, Clone)]
pub struct TapeScratch {
    vals: Vec<f64>,
    grads: Vec<f64>,
    pub(crate) grad_out: Vec<f64>,
}

impl Tape {
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// Evaluate value and θ-gradient. `grad` must have length `theta.len()`.
    pub fn eval_dual(
        &self,
        t: f64,
        theta: &[f64],
        grad: &mut [f64],
        scratch: &mut TapeScratch,
    ) -> Result<f64> {
        let p = theta.len();
        if self.zero {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return Ok(0.0);
        }
        // Every slot is written before it is read, so stale contents are fine.
        if scratch.vals.len() < self.max_depth {
            scratch.vals.resize(self.max_depth, 0.0);
        }
        if scratch.grads.len() < self.max_depth * p {
            scratch.grads.resize(self.max_depth * p, 0.0);
        }
        let vals = &mut scratch.vals;
        let grads = &mut scratch.grads;
        let mut sp = 0usize;
        let nonfinite = |what| Error::NonFinite {
            what,
            entry: vec![],
            t,
        };
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    vals[sp] = c;
                    grads[sp * p..(sp + 1) * p].iter_mut().for_each(|g| *g = 0.0);
                    sp += 1;
                }
                Op::Time => {
                    vals[sp] = t;
                    grads[sp * p..(sp + 1) * p].iter_mut().for_each(|g| *g = 0.0);
                    sp += 1;
                }
                Op::Param(k) => {
                    vals[sp] = theta[k];
                    let g = &mut grads[sp * p..(sp + 1) * p];
                    g.iter_mut().for_each(|g| *g = 0.0);
                    g[k] = 1.0;
                    sp += 1;
                }
                Op::Neg => {
                    let i = sp - 1;
                    vals[i] = -vals[i];
                    grads[i * p..(i + 1) * p].iter_mut().for_each(|g| *g = -*g);
                }
                Op::Sin | Op::Cos | Op::Exp => {
                    let i = sp - 1;
                    let x = vals[i];
                    let (v, dv) = match *op {
                        Op::Sin => (x.sin(), x.cos()),
                        Op::Cos => (x.cos(), -x.sin()),
                        _ => {
                            let e = x.exp();
                            (e, e)
                        }
                    };
                    vals[i] = v;
                    grads[i * p..(i + 1) * p].iter_mut().for_each(|g| *g *= dv);
                }
                Op::PowConst(c) => {
                    let i = sp - 1;
                    let x = vals[i];
                    let (v, dv) = if c == 0.0 {
                        (1.0, 0.0)
                    } else if c.fract() == 0.0 && c.abs() < i32::MAX as f64 {
                        let n = c as i32;
                        (x.powi(n), c * x.powi(n - 1))
                    } else if x > 0.0 {
                        (x.powf(c), c * x.powf(c - 1.0))
                    } else {
                        return Err(nonfinite("non-integer power of a non-positive base"));
                    };
                    vals[i] = v;
                    grads[i * p..(i + 1) * p].iter_mut().for_each(|g| *g *= dv);
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let j = sp - 1;
                    let i = sp - 2;
                    let (a, b) = (vals[i], vals[j]);
                    let (left, right) = grads.split_at_mut(j * p);
                    let ga = &mut left[i * p..(i + 1) * p];
                    let gb = &right[..p];
                    match *op {
                        Op::Add => {
                            vals[i] = a + b;
                            ga.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
                        }
                        Op::Sub => {
                            vals[i] = a - b;
                            ga.iter_mut().zip(gb).for_each(|(x, y)| *x -= y);
                        }
                        Op::Mul => {
                            vals[i] = a * b;
                            ga.iter_mut().zip(gb).for_each(|(x, y)| *x = *x * b + a * y);
                        }
                        _ => {
                            if b == 0.0 {
                                return Err(nonfinite("division by zero"));
                            }
                            vals[i] = a / b;
                            let b2 = b * b;
                            ga.iter_mut()
                                .zip(gb)
                                .for_each(|(x, y)| *x = (*x * b - a * y) / b2);
                        }
                    }
                    sp -= 1;
                }
            }
        }
        debug_assert_eq!(sp, 1);
        let v = vals[0];
        if !v.is_finite() || grads[..p].iter().any(|g| !g.is_finite()) {
            return Err(nonfinite("expression"));
        }
        grad.copy_from_slice(&grads[..p]);
        Ok(v)
    }

    /// Value-only evaluation.
    pub fn eval(&self, t: f64, theta: &[f64], scratch: &mut TapeScratch) -> Result<f64> {
        if self.zero {
            return Ok(0.0);
        }
        if scratch.vals.len() < self.max_depth {
            scratch.vals.resize(self.max_depth, 0.0);
        }
        let vals = &mut scratch.vals;
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    vals[sp] = c;
                    sp += 1;
                }
                Op::Time => {
                    vals[sp] = t;
                    sp += 1;
                }
                Op::Param(k) => {
                    vals[sp] = theta[k];
                    sp += 1;
                }
                Op::Neg => vals[sp - 1] = -vals[sp - 1],
                Op::Sin => vals[sp - 1] = vals[sp - 1].sin(),
                Op::Cos => vals[sp - 1] = vals[sp - 1].cos(),
                Op::Exp => vals[sp - 1] = vals[sp - 1].exp(),
                Op::PowConst(c) => vals[sp - 1] = pow_checked(vals[sp - 1], c, t)?,
                Op::Add => {
                    vals[sp - 2] += vals[sp - 1];
                    sp -= 1;
                }
                Op::Sub => {
                    vals[sp - 2] -= vals[sp - 1];
                    sp -= 1;
                }
                Op::Mul => {
                    vals[sp - 2] *= vals[sp - 1];
                    sp -= 1;
                }
                Op::Div => {
                    if vals[sp - 1] == 0.0 {
                        return Err(Error::NonFinite {
                            what: "division by zero",
                            entry: vec![],
                            t,
                        });
                    }
                    vals[sp - 2] /= vals[sp - 1];
                    sp -= 1;
                }
            }
        }
        let v = vals[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                what: "expression",
                entry: vec![],
                t,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(u8),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(Tok, usize)> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if !c.is_ascii() {
            return Err(Error::Syntax {
                offset: start,
                message: "non-ASCII input".into(),
            });
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = self.pos;
            while end < self.src.len() && (self.src[end].is_ascii_digit() || self.src[end] == b'.')
            {
                end += 1;
            }
            if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
                let mut e = end + 1;
                if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                    e += 1;
                }
                if e < self.src.len() && self.src[e].is_ascii_digit() {
                    while e < self.src.len() && self.src[e].is_ascii_digit() {
                        e += 1;
                    }
                    end = e;
                }
            }
            let text = std::str::from_utf8(&self.src[start..end]).unwrap_or_default();
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = self.pos;
            while end < self.src.len()
                && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
            {
                end += 1;
            }
            let name = String::from_utf8_lossy(&self.src[start..end]).into_owned();
            self.pos = end;
            return Ok((Tok::Ident(name), start));
        }
        if b"+-*/^()[]".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Sym(c), start));
        }
        Err(Error::Syntax {
            offset: start,
            message: format!("unexpected character `{}`", c as char),
        })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
    n_params: usize,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<()> {
        let (tok, at) = self.lexer.next()?;
        self.tok = tok;
        self.at = at;
        Ok(())
    }

    fn expect_sym(&mut self, s: u8) -> Result<()> {
        if self.tok == Tok::Sym(s) {
            self.bump()
        } else {
            Err(Error::Syntax {
                offset: self.at,
                message: format!("expected `{}`", s as char),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym(b'+') => BinOp::Add,
                Tok::Sym(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym(b'*') => BinOp::Mul,
                Tok::Sym(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.tok == Tok::Sym(b'-') {
            self.bump()?;
            let e = self.unary()?;
            return Ok(Expr::Neg(Box::new(e)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.tok != Tok::Sym(b'^') {
            return Ok(base);
        }
        self.bump()?;
        let at = self.at;
        let negative = if self.tok == Tok::Sym(b'-') {
            self.bump()?;
            true
        } else {
            false
        };
        let exponent = match self.tok {
            Tok::Num(v) => {
                self.bump()?;
                if negative {
                    Expr::Neg(Box::new(Expr::Const(v)))
                } else {
                    Expr::Const(v)
                }
            }
            _ => {
                return Err(Error::Syntax {
                    offset: at,
                    message: "exponent must be a numeric constant".into(),
                })
            }
        };
        Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)))
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.at;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Sym(b'(') => {
                self.bump()?;
                if self.tok == Tok::End {
                    return Err(unclosed(at));
                }
                let e = self.expr()?;
                if self.tok == Tok::End {
                    return Err(unclosed(at));
                }
                self.expect_sym(b')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump()?;
                match name.as_str() {
                    "t" => Ok(Expr::Time),
                    "theta" => {
                        self.expect_sym(b'[')?;
                        let idx_at = self.at;
                        let index = match self.tok {
                            Tok::Num(v) if v.fract() == 0.0 && v >= 0.0 => v as usize,
                            _ => {
                                return Err(Error::Syntax {
                                    offset: idx_at,
                                    message: "expected integer parameter index".into(),
                                })
                            }
                        };
                        self.bump()?;
                        self.expect_sym(b']')?;
                        if index == 0 || index > self.n_params {
                            return Err(Error::ParamIndex {
                                index,
                                p: self.n_params,
                            });
                        }
                        Ok(Expr::Param(index - 1))
                    }
                    "sin" | "cos" | "exp" => {
                        let func = match name.as_str() {
                            "sin" => Func::Sin,
                            "cos" => Func::Cos,
                            _ => Func::Exp,
                        };
                        let open = self.at;
                        self.expect_sym(b'(')?;
                        if self.tok == Tok::End {
                            return Err(unclosed(open));
                        }
                        let e = self.expr()?;
                        if self.tok == Tok::End {
                            return Err(unclosed(open));
                        }
                        self.expect_sym(b')')?;
                        Ok(Expr::Call(func, Box::new(e)))
                    }
                    _ => Err(Error::UnknownIdentifier { name, offset: at }),
                }
            }
            Tok::End => Err(Error::Syntax {
                offset: at,
                message: "unexpected end of input".into(),
            }),
            Tok::Sym(c) => Err(Error::Syntax {
                offset: at,
                message: format!("unexpected `{}`", c as char),
            }),
        }
    }
}

fn unclosed(offset: usize) -> Error {
    Error::Syntax {
        offset,
        message: "unclosed `(`".into(),
    }
}

/// Parse an expression referencing `t` and `theta[1..=n_params]`.
pub fn parse_expr(text: &str, n_params: usize) -> Result<Expr> {
    let mut parser = Parser {
        lexer: Lexer {
            src: text.as_bytes(),
            pos: 0,
        },
        tok: Tok::End,
        at: 0,
        n_params,
    };
    parser.bump()?;
    let e = parser.expr()?;
    if parser.tok != Tok::End {
        return Err(Error::Syntax {
            offset: parser.at,
            message: "trailing input".into(),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonlinear_entry_is_division_rooted() {
        let e = parse_expr("theta[1]/(theta[2]^2 + t)", 2).unwrap();
        assert!(matches!(e, Expr::Binary(BinOp::Div, _, _)));
        assert_eq!(e.eval(0.0, &[1.4, 1.0]).unwrap(), 1.4);
    }

    #[test]
    fn zero_literal() {
        let e = parse_expr("0", 0).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn unclosed_paren_reports_offset() {
        match parse_expr("theta[1]*(", 1) {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_expr("foo + 1", 1),
            Err(Error::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(
            parse_expr("theta[3]", 2),
            Err(Error::ParamIndex { index: 3, p: 2 })
        ));
        assert!(matches!(parse_expr("theta[0]", 2), Err(Error::ParamIndex { .. })));
        assert!(matches!(parse_expr("t ^ t", 0), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expr("1 2", 0), Err(Error::Syntax { offset: 2, .. })));
    }

    #[test]
    fn precedence_and_whitespace() {
        let a = parse_expr("1+2*3^2", 0).unwrap();
        let b = parse_expr("  1 + 2 * 3 ^ 2 ", 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.eval(0.0, &[]).unwrap(), 19.0);
        assert_eq!(parse_expr("-2^2", 0).unwrap().eval(0.0, &[]).unwrap(), -4.0);
        assert_eq!(parse_expr("8/4/2", 0).unwrap().eval(0.0, &[]).unwrap(), 1.0);
        assert_eq!(parse_expr("2^-1", 0).unwrap().eval(0.0, &[]).unwrap(), 0.5);
        assert_eq!(parse_expr("1e-2*3", 0).unwrap().eval(0.0, &[]).unwrap(), 0.03);
    }

    #[test]
    fn dual_matches_hand_derivatives() {
        let e = parse_expr("theta[1]/(theta[2]^2 + t)", 2).unwrap();
        let tape = e.compile();
        let mut g = [0.0; 2];
        let mut s = TapeScratch::default();
        let v = tape.eval_dual(0.0, &[1.4, 1.0], &mut g, &mut s).unwrap();
        assert_eq!(v, 1.4);
        assert!((g[0] - 1.0).abs() < 1e-15);
        assert!((g[1] + 2.8).abs() < 1e-15);
        assert_eq!(tape.eval(0.0, &[1.4, 1.0], &mut s).unwrap(), 1.4);
    }

    #[test]
    fn runtime_errors() {
        let e = parse_expr("1/theta[1]", 1).unwrap();
        assert!(e.eval(0.0, &[0.0]).is_err());
        let e = parse_expr("theta[1]^0.5", 1).unwrap();
        assert!(e.eval(0.0, &[-1.0]).is_err());
        let mut s = TapeScratch::default();
        assert!(e.compile().eval(0.0, &[-1.0], &mut s).is_err());
        assert!((e.eval(0.0, &[4.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn display_roundtrips() {
        for src in ["theta[1]/(theta[2]^2 + t)", "-(theta[1]+theta[2])", "sin(t)*exp(-t)", "2^-1"] {
            let e = parse_expr(src, 2).unwrap();
            let again = parse_expr(&e.to_string(), 2).unwrap();
            for &(t, a, b) in &[(0.3, 1.2, 0.7), (2.0, -0.5, 1.5)] {
                assert_eq!(e.eval(t, &[a, b]).unwrap(), again.eval(t, &[a, b]).unwrap());
            }
        }
    }
}
