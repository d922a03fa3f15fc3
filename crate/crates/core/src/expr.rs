//! Scalar expressions of `(t, x)`: parsing, evaluation and symbolic differentiation.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 't' | 'x' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := exp | log | tanh | sech | sin | cos | softplus | logistic
//! number  := digits ['.' digits] [('e' | 'E') ['+' | '-'] digits]
//! ```
//!
//! `^` binds tighter than unary minus and associates to the right, so `-x^2` is
//! `-(x^2)` and `2^3^2` is `2^9`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Independent variable of a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
}

/// Elementary functions available in expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Tanh,
    Sech,
    Sin,
    Cos,
    /// `log(1 + e^u)`
    Softplus,
    /// `1 / (1 + e^{-u})`
    Logistic,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Sech => "sech",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Softplus => "softplus",
            Func::Logistic => "logistic",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "tanh" => Func::Tanh,
            "sech" => Func::Sech,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "softplus" => Func::Softplus,
            "logistic" => Func::Logistic,
            _ => return None,
        })
    }

    fn apply(self, u: f64) -> f64 {
        match self {
            Func::Exp => u.exp(),
            Func::Log => u.ln(),
            Func::Tanh => u.tanh(),
            Func::Sech => {
                let a = u.abs();
                if a > 700.0 {
                    2.0 * (-a).exp()
                } else {
                    1.0 / a.cosh()
                }
            }
            Func::Sin => u.sin(),
            Func::Cos => u.cos(),
            Func::Softplus => u.max(0.0) + (-u.abs()).exp().ln_1p(),
            Func::Logistic => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
        }
    }
}

/// Expression tree. Subtrees are shared, so derivative trees stay compact.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, Arc<Expr>),
    Call(Func, Arc<Expr>),
}

pub type ExprRef = Arc<Expr>;

pub fn constant(c: f64) -> ExprRef {
    Arc::new(Expr::Const(c))
}

pub fn var(v: Var) -> ExprRef {
    Arc::new(Expr::Var(v))
}

fn as_const(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(c) => Some(*c),
        _ => None,
    }
}

pub fn neg(a: ExprRef) -> ExprRef {
    match &*a {
        Expr::Const(c) => constant(-c),
        Expr::Neg(inner) => inner.clone(),
        _ => Arc::new(Expr::Neg(a)),
    }
}

pub fn add(a: ExprRef, b: ExprRef) -> ExprRef {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => constant(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => match &*b {
            Expr::Neg(inner) => Arc::new(Expr::Sub(a, inner.clone())),
            _ => Arc::new(Expr::Add(a, b)),
        },
    }
}

pub fn sub(a: ExprRef, b: ExprRef) -> ExprRef {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => constant(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => match &*b {
            Expr::Neg(inner) => Arc::new(Expr::Add(a, inner.clone())),
            _ => Arc::new(Expr::Sub(a, b)),
        },
    }
}

pub fn mul(a: ExprRef, b: ExprRef) -> ExprRef {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => constant(x * y),
        (Some(x), _) if x == 0.0 => constant(0.0),
        (_, Some(y)) if y == 0.0 => constant(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        (None, Some(_)) => Arc::new(Expr::Mul(b, a)),
        _ => Arc::new(Expr::Mul(a, b)),
    }
}

pub fn div(a: ExprRef, b: ExprRef) -> ExprRef {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) if y != 0.0 => constant(x / y),
        (Some(x), _) if x == 0.0 => constant(0.0),
        (_, Some(y)) if y == 1.0 => a,
        (_, Some(y)) if y != 0.0 => mul(constant(1.0 / y), a),
        _ => Arc::new(Expr::Div(a, b)),
    }
}

pub fn pow(a: ExprRef, b: ExprRef) -> ExprRef {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => constant(eval_pow(x, y)),
        (_, Some(y)) if y == 0.0 => constant(1.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Arc::new(Expr::Pow(a, b)),
    }
}

pub fn call(f: Func, a: ExprRef) -> ExprRef {
    match as_const(&a) {
        Some(x) => constant(f.apply(x)),
        None => Arc::new(Expr::Call(f, a)),
    }
}

fn eval_pow(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

impl Expr {
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::X) => x,
            Expr::Neg(a) => -a.eval(t, x),
            Expr::Add(a, b) => a.eval(t, x) + b.eval(t, x),
            Expr::Sub(a, b) => a.eval(t, x) - b.eval(t, x),
            Expr::Mul(a, b) => a.eval(t, x) * b.eval(t, x),
            Expr::Div(a, b) => a.eval(t, x) / b.eval(t, x),
            Expr::Pow(a, b) => eval_pow(a.eval(t, x), b.eval(t, x)),
            Expr::Call(f, a) => f.apply(a.eval(t, x)),
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    /// True when the tree contains a construct that can produce a pole or a domain
    /// error: a quotient, a logarithm, or a power that is not a nonnegative integer.
    pub fn needs_pole_screen(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Div(_, _) => true,
            Expr::Call(Func::Log, _) => true,
            Expr::Pow(a, b) => {
                let safe = matches!(as_const(b), Some(c) if c >= 0.0 && c.fract() == 0.0);
                !safe || a.needs_pole_screen() || b.needs_pole_screen()
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.needs_pole_screen(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.needs_pole_screen() || b.needs_pole_screen(),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        as_const(self)
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Call(_, a) => 1 + a.node_count(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }
}

/// Symbolic partial derivative with respect to `v`.
pub fn diff(e: &ExprRef, v: Var) -> ExprRef {
    match &**e {
        Expr::Const(_) => constant(0.0),
        Expr::Var(w) => constant(if *w == v { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(diff(a, v)),
        Expr::Add(a, b) => add(diff(a, v), diff(b, v)),
        Expr::Sub(a, b) => sub(diff(a, v), diff(b, v)),
        Expr::Mul(a, b) => add(mul(diff(a, v), b.clone()), mul(a.clone(), diff(b, v))),
        Expr::Div(a, b) => {
            let da = diff(a, v);
            let db = diff(b, v);
            if db.as_constant() == Some(0.0) {
                div(da, b.clone())
            } else {
                div(sub(mul(da, b.clone()), mul(a.clone(), db)), mul(b.clone(), b.clone()))
            }
        }
        Expr::Pow(a, b) => {
            let da = diff(a, v);
            let db = diff(b, v);
            match b.as_constant() {
                Some(c) => mul(mul(constant(c), pow(a.clone(), constant(c - 1.0))), da),
                None => {
                    // a^b (b' log a + b a'/a)
                    let term = add(mul(db, call(Func::Log, a.clone())), div(mul(b.clone(), da), a.clone()));
                    mul(e.clone(), term)
                }
            }
        }
        Expr::Call(f, a) => {
            let da = diff(a, v);
            if da.as_constant() == Some(0.0) {
                return constant(0.0);
            }
            let outer = match f {
                Func::Exp => e.clone(),
                Func::Log => div(constant(1.0), a.clone()),
                Func::Tanh => pow(call(Func::Sech, a.clone()), constant(2.0)),
                Func::Sech => neg(mul(e.clone(), call(Func::Tanh, a.clone()))),
                Func::Sin => call(Func::Cos, a.clone()),
                Func::Cos => neg(call(Func::Sin, a.clone())),
                Func::Softplus => call(Func::Logistic, a.clone()),
                Func::Logistic => mul(e.clone(), sub(constant(1.0), e.clone())),
            };
            mul(outer, da)
        }
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(_, _) | Expr::Sub(_, _) => 1,
        Expr::Mul(_, _) | Expr::Div(_, _) => 2,
        Expr::Neg(_) => 3,
        Expr::Pow(_, _) => 4,
        Expr::Const(c) if *c < 0.0 => 3,
        _ => 5,
    }
}

struct Wrapped<'a>(&'a Expr, u8);

impl fmt::Display for Wrapped<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if precedence(self.0) < self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c == std::f64::consts::PI {
                    write!(f, "pi")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Neg(a) => write!(f, "-{}", Wrapped(a, 4)),
            Expr::Add(a, b) => write!(f, "{} + {}", Wrapped(a, 1), Wrapped(b, 2)),
            Expr::Sub(a, b) => write!(f, "{} - {}", Wrapped(a, 1), Wrapped(b, 2)),
            Expr::Mul(a, b) => write!(f, "{}*{}", Wrapped(a, 2), Wrapped(b, 3)),
            Expr::Div(a, b) => write!(f, "{}/{}", Wrapped(a, 2), Wrapped(b, 3)),
            Expr::Pow(a, b) => write!(f, "{}^{}", Wrapped(a, 5), Wrapped(b, 4)),
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), a),
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
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

fn lex(text: &str) -> Result<Lexer> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 =
                s.parse().map_err(|_| Error::Parse { column: col, message: format!("malformed number `{s}`") })?;
            toks.push((Tok::Num(v), col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^".contains(c) {
            toks.push((Tok::Op(c), col));
            i += 1;
        } else if c == '(' {
            toks.push((Tok::LParen, col));
            i += 1;
        } else if c == ')' {
            toks.push((Tok::RParen, col));
            i += 1;
        } else {
            return Err(Error::Parse { column: col, message: format!("unexpected character `{c}`") });
        }
    }
    toks.push((Tok::End, chars.len() + 1));
    Ok(Lexer { toks })
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    /// Columns of currently open parentheses, innermost last.
    open: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let column = match (self.peek(), self.open.last()) {
            (Tok::End, Some(&c)) => c,
            _ => self.col(),
        };
        let mut message = message.into();
        if matches!(self.peek(), Tok::End) && !self.open.is_empty() {
            message = format!("{message}; unclosed parenthesis");
        }
        Err(Error::Parse { column, message })
    }

    fn expr(&mut self) -> Result<ExprRef> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = add(lhs, self.term()?);
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ExprRef> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = mul(lhs, self.unary()?);
                }
                Tok::Op('/') => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = div(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<ExprRef> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(neg(self.unary()?))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<ExprRef> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            // keep non-integer powers visible to the pole screen even when constant-folded
            return Ok(match (base.as_constant(), exponent.as_constant()) {
                (Some(_), Some(_)) => pow(base, exponent),
                _ => Arc::new(Expr::Pow(base, exponent)),
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprRef> {
        let (tok, col) = self.bump();
        match tok {
            Tok::Num(v) => Ok(constant(v)),
            Tok::Ident(name) => match name.as_str() {
                "t" => Ok(var(Var::T)),
                "x" => Ok(var(Var::X)),
                "pi" => Ok(constant(std::f64::consts::PI)),
                _ => match Func::from_name(&name) {
                    Some(f) => {
                        if self.peek() != &Tok::LParen {
                            return self.error(format!("expected `(` after function `{name}`"));
                        }
                        let (_, pcol) = self.bump();
                        self.open.push(pcol);
                        let arg = self.expr()?;
                        self.close()?;
                        Ok(Arc::new(Expr::Call(f, arg)))
                    }
                    None => Err(Error::Parse { column: col, message: format!("unknown identifier `{name}`") }),
                },
            },
            Tok::LParen => {
                self.open.push(col);
                let inner = self.expr()?;
                self.close()?;
                Ok(inner)
            }
            Tok::End => {
                self.pos = self.toks.len() - 1;
                self.error("unexpected end of expression")
            }
            Tok::Op(c) => Err(Error::Parse { column: col, message: format!("unexpected operator `{c}`") }),
            Tok::RParen => Err(Error::Parse { column: col, message: "unexpected `)`".into() }),
        }
    }

    fn close(&mut self) -> Result<()> {
        if self.peek() == &Tok::RParen {
            self.bump();
            self.open.pop();
            Ok(())
        } else {
            self.error("expected `)`")
        }
    }
}

/// Parse an expression; errors carry the 1-based column of the offending token.
/// An expression that ends inside an open parenthesis reports that parenthesis.
pub fn parse(text: &str) -> Result<ExprRef> {
    let lexer = lex(text)?;
    let mut p = Parser { toks: lexer.toks, pos: 0, open: Vec::new() };
    if p.peek() == &Tok::End {
        return Err(Error::Parse { column: 1, message: "empty expression".into() });
    }
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        Tok::RParen => p.error("unmatched `)`"),
        _ => p.error("unexpected token after expression"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, t: f64, x: f64) -> f64 {
        parse(s).unwrap().eval(t, x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2*3", 0.0, 0.0), 7.0);
        assert_eq!(ev("-x^2", 0.0, 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("(1+2)*3", 0.0, 0.0), 9.0);
        assert_eq!(ev("8/4/2", 0.0, 0.0), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0, 0.0), -4.0);
        assert_eq!(ev("2*x^-1", 0.0, 4.0), 0.5);
        assert!((ev("1.5e-3 + .5", 0.0, 0.0) - 0.5015).abs() < 1e-15);
        assert!((ev("sin(pi/2)", 0.0, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(ev("t*x", 2.0, 3.0), 6.0);
    }

    #[test]
    fn functions() {
        assert!((ev("sech(0.3)", 0.0, 0.0) - 1.0 / 0.3f64.cosh()).abs() < 1e-15);
        assert_eq!(ev("sech(1000)", 0.0, 0.0), 0.0);
        assert!((ev("softplus(0)", 0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((ev("softplus(800)", 0.0, 0.0) - 800.0).abs() < 1e-12);
        assert!(ev("softplus(-800)", 0.0, 0.0) >= 0.0);
        assert!((ev("logistic(0)", 0.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((ev("log(exp(2))", 0.0, 0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_columns() {
        assert_eq!(parse("2 + tanh(").unwrap_err().column(), Some(9));
        assert_eq!(parse("2 + (x").unwrap_err().column(), Some(5));
        assert_eq!(parse("2 + foo(x)").unwrap_err().column(), Some(5));
        assert_eq!(parse("2 $ x").unwrap_err().column(), Some(3));
        assert_eq!(parse("x)").unwrap_err().column(), Some(2));
        assert_eq!(parse("2 +").unwrap_err().column(), Some(4));
        assert_eq!(parse("").unwrap_err().column(), Some(1));
        assert!(matches!(parse("y"), Err(Error::Parse { message, .. }) if message.contains("unknown identifier")));
    }

    #[test]
    fn pole_screen_flags() {
        assert!(!parse("2 + tanh(x)").unwrap().needs_pole_screen());
        assert!(!parse("x^2").unwrap().needs_pole_screen());
        assert!(!parse("tanh(x/4)").unwrap().needs_pole_screen());
        assert!(parse("1/x").unwrap().needs_pole_screen());
        assert!(parse("log(x)").unwrap().needs_pole_screen());
        assert!(parse("x^0.5").unwrap().needs_pole_screen());
        assert!(parse("x^-1").unwrap().needs_pole_screen());
    }

    #[test]
    fn derivatives_of_known_functions() {
        let e = parse("2 + tanh(x)").unwrap();
        assert_eq!(diff(&e, Var::X).eval(0.0, 0.0), 1.0);
        assert_eq!(diff(&e, Var::T).as_constant(), Some(0.0));
        let c = parse("1").unwrap();
        assert_eq!(diff(&c, Var::X).as_constant(), Some(0.0));
        let p = parse("x^t").unwrap();
        let d = diff(&p, Var::T).eval(2.0, 3.0);
        assert!((d - 9.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            "exp(sin(x))",
            "2+0.5*tanh(x/4)",
            "sech(x)^2*cos(t*x)",
            "softplus(10*sech(x)^2 - 3)/10",
            "logistic(x - t)",
            "x^3/(2 + cos(x))",
            "log(2 + sin(3*x + t))",
            "(1 + x^2)^0.5",
        ];
        let h = 1e-4;
        for s in cases {
            let e = parse(s).unwrap();
            let dx = diff(&e, Var::X);
            let dt = diff(&e, Var::T);
            for &(t, x) in &[(0.1, 0.7), (0.9, -1.3), (0.0, 2.2)] {
                let fd_x = (e.eval(t, x + h) - e.eval(t, x - h)) / (2.0 * h);
                let fd_t = (e.eval(t + h, x) - e.eval(t - h, x)) / (2.0 * h);
                let ax = dx.eval(t, x);
                let at = dt.eval(t, x);
                assert!((ax - fd_x).abs() < 1e-6 * (1.0 + ax.abs()), "{s} d/dx at {x}");
                assert!((at - fd_t).abs() < 1e-6 * (1.0 + at.abs()), "{s} d/dt at {t}");
            }
        }
    }

    #[test]
    fn display_round_trips() {
        for s in ["2 + tanh(x/4)", "-x^2", "(1 - x)*(t + 2)", "sech(x)^2/(3 - cos(x))", "2^3^x", "-(x - 1)"] {
            let e = parse(s).unwrap();
            let again = parse(&e.to_string()).unwrap();
            for &x in &[-1.1, 0.3, 2.5] {
                assert!((e.eval(0.4, x) - again.eval(0.4, x)).abs() < 1e-12, "{s} -> {e}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn polynomial_derivative(a in -3.0..3.0f64, b in -3.0..3.0f64, x in -2.0..2.0f64) {
                let e = parse(&format!("{a}*x^3 + {b}*x")).unwrap();
                let d = diff(&e, Var::X).eval(0.0, x);
                prop_assert!((d - (3.0 * a * x * x + b)).abs() < 1e-12 * (1.0 + d.abs()));
            }

            #[test]
            fn parse_never_panics(s in "[-+*/^() x0-9.a-z]{0,20}") {
                let _ = parse(&s);
            }
        }
    }
}
