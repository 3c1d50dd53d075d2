//! Small arithmetic expression language for user-defined manifolds, with
//! symbolic first and second derivatives.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '·' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := exp | sin | cos | cosh | sqrt
//! ```
//!
//! `pi` and `e` are predefined constants.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Constraint, Convexity, GraphFunction, GraphLift, ManifoldSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Cosh,
    Sqrt,
    // derivative-only
    Sinh,
    Ln,
}

impl Func {
    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Cosh => x.cosh(),
            Func::Sqrt => x.sqrt(),
            Func::Sinh => x.sinh(),
            Func::Ln => x.ln(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Cosh => "cosh",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Ln => "ln",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "z{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (e, Expr::Const(z)) if z == 0.0 => e,
        (Expr::Const(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(z), _) if z == 0.0 => Expr::Const(0.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (_, Expr::Const(z)) if z == 0.0 => Expr::Const(1.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x.powf(y)),
        (a, b) => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        Expr::Neg(inner) => *inner,
        e => Expr::Neg(Box::new(e)),
    }
}

fn call(func: Func, a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(func.apply(x)),
        e => Expr::Call(func, Box::new(e)),
    }
}

impl Expr {
    /// Parses `src` with the given variable names bound to indices `0..`.
    pub fn parse(src: &str, variables: &[String]) -> Result<Expr> {
        let mut p = Parser {
            chars: src.char_indices().collect(),
            pos: 0,
            variables,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => z[*i],
            Expr::Add(a, b) => a.eval(z) + b.eval(z),
            Expr::Sub(a, b) => a.eval(z) - b.eval(z),
            Expr::Mul(a, b) => a.eval(z) * b.eval(z),
            Expr::Div(a, b) => a.eval(z) / b.eval(z),
            Expr::Pow(a, b) => match **b {
                Expr::Const(c) if c.fract() == 0.0 && c.abs() < 64.0 => a.eval(z).powi(c as i32),
                _ => a.eval(z).powf(b.eval(z)),
            },
            Expr::Neg(a) => -a.eval(z),
            Expr::Call(f, a) => f.apply(a.eval(z)),
        }
    }

    /// Largest variable index referenced plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.arity().max(b.arity())
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
        }
    }

    /// Symbolic partial derivative with respect to variable `j`.
    pub fn derivative(&self, j: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == j { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => add(a.derivative(j), b.derivative(j)),
            Expr::Sub(a, b) => sub(a.derivative(j), b.derivative(j)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(j), (**b).clone()),
                mul((**a).clone(), b.derivative(j)),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.derivative(j), (**b).clone()),
                    mul((**a).clone(), b.derivative(j)),
                ),
                pow((**b).clone(), Expr::Const(2.0)),
            ),
            Expr::Pow(a, b) => match **b {
                Expr::Const(c) => mul(
                    mul(Expr::Const(c), pow((**a).clone(), Expr::Const(c - 1.0))),
                    a.derivative(j),
                ),
                _ => mul(
                    self.clone(),
                    add(
                        mul(b.derivative(j), call(Func::Ln, (**a).clone())),
                        div(mul((**b).clone(), a.derivative(j)), (**a).clone()),
                    ),
                ),
            },
            Expr::Neg(a) => neg(a.derivative(j)),
            Expr::Call(f, a) => {
                let inner = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, inner),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Cosh => call(Func::Sinh, inner),
                    Func::Sinh => call(Func::Cosh, inner),
                    Func::Sqrt => div(Expr::Const(0.5), call(Func::Sqrt, inner)),
                    Func::Ln => div(Expr::Const(1.0), inner),
                };
                mul(outer, a.derivative(j))
            }
        }
    }
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    variables: &'a [String],
}

impl Parser<'_> {
    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or_else(
            || self.chars.last().map_or(0, |(o, c)| o + c.len_utf8()),
            |(o, _)| *o,
        )
    }

    fn error(&self, message: &str) -> Error {
        Error::Expression {
            offset: self.offset(),
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|(_, c)| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn expect(&mut self, want: char) -> Result<()> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{want}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') | Some('−') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some('*') | Some('·') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some('/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some('-') | Some('−')) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let mut prev = ' ';
        while let Some(&(_, c)) = self.chars.get(self.pos) {
            let exp_sign = (c == '+' || c == '-') && (prev == 'e' || prev == 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                prev = c;
                self.pos += 1;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().map(|(_, c)| c).collect();
        text.parse::<f64>().map(Expr::Const).map_err(|_| Error::Expression {
            offset: self.chars[start].0,
            message: format!("invalid number `{text}`"),
        })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|(_, c)| c.is_alphanumeric() || *c == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().map(|(_, c)| c).collect();
        let func = match name.as_str() {
            "exp" => Some(Func::Exp),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "cosh" => Some(Func::Cosh),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        };
        if let Some(func) = func {
            self.expect('(')?;
            let arg = self.expr()?;
            self.expect(')')?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        if let Some(i) = self.variables.iter().position(|v| *v == name) {
            return Ok(Expr::Var(i));
        }
        match name.as_str() {
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            "e" => Ok(Expr::Const(std::f64::consts::E)),
            _ => Err(Error::Expression {
                offset: self.chars[start].0,
                message: format!("unknown identifier `{name}`"),
            }),
        }
    }
}

/// Scalar function given by an expression, with symbolic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct SymbolicFn {
    expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Vec<Expr>>,
}

impl SymbolicFn {
    pub fn new(expr: Expr, dim: usize) -> Self {
        let grad: Vec<Expr> = (0..dim).map(|j| expr.derivative(j)).collect();
        let hess = grad
            .iter()
            .map(|g| (0..dim).map(|k| g.derivative(k)).collect())
            .collect();
        Self { expr, grad, hess }
    }

    fn grad_at(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.grad.len(), self.grad.iter().map(|g| g.eval(z)))
    }

    fn hess_at(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.grad.len();
        DMatrix::from_fn(n, n, |i, j| self.hess[i][j].eval(z))
    }
}

impl Constraint for SymbolicFn {
    fn value(&self, z: &[f64]) -> f64 {
        self.expr.eval(z)
    }

    fn gradient(&self, z: &[f64]) -> Option<DVector<f64>> {
        Some(self.grad_at(z))
    }

    fn hessian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.hess_at(z))
    }
}

impl GraphFunction for SymbolicFn {
    fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        Some(self.grad_at(x))
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.hess_at(x))
    }
}

fn unknown() -> Convexity {
    Convexity::Unknown
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDef {
    pub expr: String,
    #[serde(default = "unknown")]
    pub convexity: Convexity,
}

/// Declarative manifold definition.
///
/// Either `constraints` (implicit `g_i(z) = 0` over the ambient variables)
/// or `graphs` (functions of the base `variables`, lifted as
/// `g_i(x) - z_{k+i} = 0`) must be given, not both.
///
/// ```json
/// { "name": "bowl", "variables": ["a", "b"], "graphs": [{ "expr": "a^2 + b^2", "convexity": "convex-sublevel" }] }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomManifold {
    pub name: String,
    /// Variable names; defaults to `z1..zn`.
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default)]
    pub ambient_dim: Option<usize>,
    #[serde(default)]
    pub constraints: Vec<ConstraintDef>,
    #[serde(default)]
    pub graphs: Vec<ConstraintDef>,
}

impl CustomManifold {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<ManifoldSpec> {
        let config_err = |path: &str, message: String| Error::Config {
            path: path.to_string(),
            message,
        };
        match (self.constraints.is_empty(), self.graphs.is_empty()) {
            (false, false) => {
                return Err(config_err("graphs", "give either constraints or graphs".into()))
            }
            (true, true) => {
                return Err(config_err("constraints", "no constraints defined".into()))
            }
            _ => {}
        }
        if self.graphs.is_empty() {
            let n = self
                .ambient_dim
                .or((!self.variables.is_empty()).then_some(self.variables.len()))
                .ok_or_else(|| config_err("ambient_dim", "missing".into()))?;
            let vars = self.resolve_vars(n)?;
            let mut constraints: Vec<Arc<dyn Constraint>> = Vec::new();
            for (i, def) in self.constraints.iter().enumerate() {
                let expr = Expr::parse(&def.expr, &vars)
                    .map_err(|e| config_err(&format!("constraints[{i}].expr"), e.to_string()))?;
                constraints.push(Arc::new(SymbolicFn::new(expr, n)));
            }
            let convexity = self.constraints.iter().map(|d| d.convexity).collect();
            ManifoldSpec::new(self.name.clone(), n, constraints, convexity)
        } else {
            if self.variables.is_empty() {
                return Err(config_err("variables", "graphs need base variable names".into()));
            }
            let k = self.variables.len();
            let mut graphs: Vec<Arc<dyn GraphFunction>> = Vec::new();
            for (i, def) in self.graphs.iter().enumerate() {
                let expr = Expr::parse(&def.expr, &self.variables)
                    .map_err(|e| config_err(&format!("graphs[{i}].expr"), e.to_string()))?;
                graphs.push(Arc::new(SymbolicFn::new(expr, k)));
            }
            let convexity = self.graphs.iter().map(|d| d.convexity).collect();
            ManifoldSpec::from_lift(self.name.clone(), GraphLift { base_dim: k, graphs }, convexity)
        }
    }

    fn resolve_vars(&self, n: usize) -> Result<Vec<String>> {
        if self.variables.is_empty() {
            return Ok((1..=n).map(|i| format!("z{i}")).collect());
        }
        if self.variables.len() != n {
            return Err(Error::Config {
                path: "variables".into(),
                message: format!("expected {n} names, got {}", self.variables.len()),
            });
        }
        Ok(self.variables.clone())
    }
}
