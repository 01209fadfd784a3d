//! A small expression language over one variable `x`.
//!
//! Initial data are written as strings such as `5 + 0.5*exp(-x^2)`. The
//! grammar only produces smooth functions, so every parsed expression can be
//! differentiated symbolically any number of times.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | atom ('^' factor)?
//! atom   := number | 'x' | fn '(' expr ')' | '(' expr ')'
//! fn     := sin | cos | exp | tanh | sech2
//! ```
//!
//! Unary minus binds looser than `^`, so `-x^2` is `-(x^2)`. The exponent of
//! `^` must not depend on `x`.

use std::fmt;

use thiserror::Error;

/// Maximum nesting depth accepted by the parser.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unknown variable `{name}` at byte {offset}; only `x` is allowed")]
    UnknownVariable { name: String, offset: usize },
    #[error("exponent at byte {offset} depends on x")]
    NonConstantExponent { offset: usize },
    #[error("expression nested deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("division by zero at x = {x}")]
    DivisionByZero { x: f64 },
    #[error("non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    /// `sech(u)^2`, the derivative of `tanh`.
    Sech2,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            "sech2" => Some(Func::Sech2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Sech2 => "sech2",
        }
    }

    fn apply(self, u: f64) -> f64 {
        match self {
            Func::Sin => u.sin(),
            Func::Cos => u.cos(),
            Func::Exp => u.exp(),
            Func::Tanh => u.tanh(),
            Func::Sech2 => {
                let c = u.cosh();
                1.0 / (c * c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// Expression tree in the variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn parse(text: &str) -> Result<Self, ExprError> {
        parse(text)
    }

    pub fn eval(&self, x: f64) -> Result<f64, ExprError> {
        eval(self, x)
    }

    pub fn derivative(&self) -> Expr {
        differentiate(self)
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_x(),
            Expr::Binary(_, a, b) => a.depends_on_x() || b.depends_on_x(),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    // Builders with light constant folding. Folding evaluates the same IEEE
    // operation the evaluator would, so results are unchanged.

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(z), _) if z == 0.0 => b,
            (_, Some(z)) if z == 0.0 => a,
            _ => Expr::Binary(BinOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (_, Some(z)) if z == 0.0 => a,
            (Some(z), _) if z == 0.0 => Expr::neg(b),
            _ => Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(z), _) | (_, Some(z)) if z == 0.0 => Expr::Const(0.0),
            (Some(o), _) if o == 1.0 => b,
            (_, Some(o)) if o == 1.0 => a,
            _ => Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (Some(z), _) if z == 0.0 => Expr::Const(0.0),
            (_, Some(o)) if o == 1.0 => a,
            _ => Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn pow(a: Expr, exponent: f64) -> Expr {
        if exponent == 0.0 {
            return Expr::Const(1.0);
        }
        if exponent == 1.0 {
            return a;
        }
        match a {
            Expr::Const(c) => Expr::Const(c.powf(exponent)),
            other => Expr::Pow(Box::new(other), exponent),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Fully parenthesized rendering; reparsing the output gives back a tree with
/// identical evaluations.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var => write!(f, "x"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, e) => {
                if *e < 0.0 {
                    write!(f, "({a}^(-{:?}))", -e)
                } else {
                    write!(f, "({a}^{e:?})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    if let Some(pos) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(ExprError::Syntax {
            offset: pos,
            message: "non-ASCII input".into(),
        });
    }
    let mut parser = Parser {
        src: text.as_bytes(),
        pos: 0,
        depth: 0,
    };
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(ExprError::TooDeep)
        } else {
            Ok(())
        }
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.leave();
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let out = if self.peek() == Some(b'-') {
            self.pos += 1;
            Expr::Neg(Box::new(self.factor()?))
        } else {
            let base = self.atom()?;
            if self.peek() == Some(b'^') {
                self.pos += 1;
                self.skip_ws();
                let at = self.pos;
                let exponent = self.factor()?;
                if exponent.depends_on_x() {
                    return Err(ExprError::NonConstantExponent { offset: at });
                }
                let value = exponent
                    .eval(0.0)
                    .map_err(|_| ExprError::NonConstantExponent { offset: at })?;
                Expr::Pow(Box::new(base), value)
            } else {
                base
            }
        };
        self.leave();
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                if name == "x" {
                    return Ok(Expr::Var);
                }
                if self.peek() == Some(b'(') {
                    let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownFunction {
                        name: name.to_string(),
                        offset: start,
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Err(ExprError::UnknownVariable {
                        name: name.to_string(),
                        offset: start,
                    })
                }
            }
            Some(_) => Err(self.syntax("expected a number, `x`, a function call or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }
}

pub fn eval(expr: &Expr, x: f64) -> Result<f64, ExprError> {
    let v = match expr {
        Expr::Const(c) => *c,
        Expr::Var => x,
        Expr::Neg(a) => -eval(a, x)?,
        Expr::Binary(op, a, b) => {
            let (a, b) = (eval(a, x)?, eval(b, x)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(ExprError::DivisionByZero { x });
                    }
                    a / b
                }
            }
        }
        Expr::Pow(a, e) => {
            let base = eval(a, x)?;
            if base == 0.0 && *e < 0.0 {
                return Err(ExprError::DivisionByZero { x });
            }
            base.powf(*e)
        }
        Expr::Call(f, a) => f.apply(eval(a, x)?),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite { x })
    }
}

/// Exact symbolic derivative with respect to `x`.
pub fn differentiate(expr: &Expr) -> Expr {
    match expr {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var => Expr::Const(1.0),
        Expr::Neg(a) => Expr::neg(differentiate(a)),
        Expr::Binary(op, a, b) => {
            let (da, db) = (differentiate(a), differentiate(b));
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => Expr::add(da, db),
                BinOp::Sub => Expr::sub(da, db),
                BinOp::Mul => Expr::add(Expr::mul(da, b), Expr::mul(a, db)),
                BinOp::Div => Expr::div(
                    Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a, db)),
                    Expr::pow(b, 2.0),
                ),
            }
        }
        Expr::Pow(a, e) => Expr::mul(
            Expr::mul(Expr::Const(*e), Expr::pow((**a).clone(), e - 1.0)),
            differentiate(a),
        ),
        Expr::Call(f, a) => {
            let inner = (**a).clone();
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, inner),
                Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                Func::Exp => Expr::call(Func::Exp, inner),
                Func::Tanh => Expr::call(Func::Sech2, inner),
                Func::Sech2 => Expr::mul(
                    Expr::mul(Expr::Const(-2.0), Expr::call(Func::Sech2, inner.clone())),
                    Expr::call(Func::Tanh, inner),
                ),
            };
            Expr::mul(outer, differentiate(a))
        }
    }
}
