//! QoI expressions: parsing, symbolic derivatives, numeric evaluation and
//! singularity reporting.
//!
//! Expressions are immutable trees over a fixed list of declared variables.
//! Every constructor folds literal subtrees, so two trees built from the same
//! text always compare equal and the canonical printer round-trips through
//! the parser.

mod derive;
mod parser;

use std::fmt;

use thiserror::Error;

use crate::scalar::Real;

pub use parser::parse_expr;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("exponent of `^` at byte {offset} must be a constant")]
    VariableExponent { offset: usize },
    #[error("expression is empty")]
    Empty,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum EvalError {
    #[error("{op} is undefined at {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("evaluation produced a non-finite value")]
    NonFinite,
    #[error("variable index {0} is not bound")]
    Unbound(usize),
}

/// Expression tree node.
///
/// Logarithms and exponentials are kept in base e; `log2`, `exp2` and
/// constant-base powers are lowered to `ln`/`exp` with folded constants.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a real constant exponent.
    Pow(Box<Expr>, f64),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
    Tanh(Box<Expr>),
    Sigmoid(Box<Expr>),
    Neg(Box<Expr>),
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Self::Const(value)
    }

    pub fn var(index: usize) -> Self {
        Self::Var(index)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Self::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn add(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Self::Const(x + y),
            (Some(x), None) if x == 0.0 => b,
            (None, Some(y)) if y == 0.0 => a,
            _ => Self::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Self::Const(x - y),
            (None, Some(y)) if y == 0.0 => a,
            (Some(x), None) if x == 0.0 => Self::neg(b),
            _ => Self::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Self::Const(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Self::Const(0.0),
            (Some(x), None) if x == 1.0 => b,
            (None, Some(y)) if y == 1.0 => a,
            _ => Self::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Self, b: Self) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Self::Const(x / y),
            (None, Some(y)) if y == 1.0 => a,
            (Some(x), None) if x == 0.0 => Self::Const(0.0),
            _ => Self::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(base: Self, exponent: f64) -> Self {
        if exponent == 1.0 {
            return base;
        }
        if exponent == 0.0 {
            return Self::Const(1.0);
        }
        match base.as_const() {
            Some(b) => Self::Const(b.powf(exponent)),
            None => Self::Pow(Box::new(base), exponent),
        }
    }

    pub fn exp(arg: Self) -> Self {
        match arg.as_const() {
            Some(c) => Self::Const(c.exp()),
            None => Self::Exp(Box::new(arg)),
        }
    }

    pub fn ln(arg: Self) -> Self {
        match arg.as_const() {
            Some(c) => Self::Const(c.ln()),
            None => Self::Ln(Box::new(arg)),
        }
    }

    pub fn sqrt(arg: Self) -> Self {
        match arg.as_const() {
            Some(c) => Self::Const(c.sqrt()),
            None => Self::Sqrt(Box::new(arg)),
        }
    }

    pub fn tanh(arg: Self) -> Self {
        match arg.as_const() {
            Some(c) => Self::Const(c.tanh()),
            None => Self::Tanh(Box::new(arg)),
        }
    }

    pub fn sigmoid(arg: Self) -> Self {
        match arg.as_const() {
            Some(c) => Self::Const(sigmoid(c)),
            None => Self::Sigmoid(Box::new(arg)),
        }
    }

    pub fn neg(arg: Self) -> Self {
        match arg {
            Self::Const(c) => Self::Const(-c),
            Self::Neg(inner) => *inner,
            other => Self::Neg(Box::new(other)),
        }
    }

    /// `log2(arg)` lowered to `ln(arg) / ln 2`.
    pub fn log2(arg: Self) -> Self {
        Self::div(Self::ln(arg), Self::Const(std::f64::consts::LN_2))
    }

    /// `base^arg` for a positive constant base, lowered to `exp(ln(base) * arg)`.
    pub fn const_base_pow(base: f64, arg: Self) -> Self {
        if base == std::f64::consts::E {
            Self::exp(arg)
        } else {
            Self::exp(Self::mul(Self::Const(base.ln()), arg))
        }
    }

    /// Symbolic derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Self {
        derive::derivative(self, var)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut best = None;
        self.visit(&mut |node| {
            if let Self::Var(i) = node {
                best = Some(best.map_or(*i, |b: usize| b.max(*i)));
            }
        });
        best
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    fn visit(&self, f: &mut impl FnMut(&Self)) {
        f(self);
        match self {
            Self::Const(_) | Self::Var(_) => {}
            Self::Add(a, b) | Self::Sub(a, b) | Self::Mul(a, b) | Self::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Self::Pow(a, _)
            | Self::Exp(a)
            | Self::Ln(a)
            | Self::Sqrt(a)
            | Self::Tanh(a)
            | Self::Sigmoid(a)
            | Self::Neg(a) => a.visit(f),
        }
    }

    /// Evaluates the expression in the scalar type `T`.
    ///
    /// Children are evaluated left to right. Division by zero, logarithms
    /// and square roots of out-of-domain arguments, and fractional powers of
    /// negative bases are reported as domain errors.
    pub fn eval<T: Real>(&self, vars: &[T]) -> Result<T, EvalError> {
        let value = self.eval_inner(vars)?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_inner<T: Real>(&self, vars: &[T]) -> Result<T, EvalError> {
        let domain = |op, arg: T| EvalError::Domain {
            op,
            arg: arg.to_f64().unwrap_or(f64::NAN),
        };
        Ok(match self {
            Self::Const(c) => T::lit(*c),
            Self::Var(i) => *vars.get(*i).ok_or(EvalError::Unbound(*i))?,
            Self::Add(a, b) => a.eval_inner(vars)? + b.eval_inner(vars)?,
            Self::Sub(a, b) => a.eval_inner(vars)? - b.eval_inner(vars)?,
            Self::Mul(a, b) => a.eval_inner(vars)? * b.eval_inner(vars)?,
            Self::Div(a, b) => {
                let num = a.eval_inner(vars)?;
                let den = b.eval_inner(vars)?;
                if den == T::zero() {
                    return Err(domain("division", den));
                }
                num / den
            }
            Self::Pow(a, e) => {
                let base = a.eval_inner(vars)?;
                let is_int = e.fract() == 0.0;
                if base < T::zero() && !is_int {
                    return Err(domain("fractional power", base));
                }
                if base == T::zero() && *e < 0.0 {
                    return Err(domain("negative power", base));
                }
                if is_int && e.abs() <= f64::from(i32::MAX) {
                    #[allow(clippy::cast_possible_truncation)]
                    base.powi(*e as i32)
                } else {
                    base.powf(T::lit(*e))
                }
            }
            Self::Exp(a) => a.eval_inner(vars)?.exp(),
            Self::Ln(a) => {
                let arg = a.eval_inner(vars)?;
                if arg <= T::zero() {
                    return Err(domain("ln", arg));
                }
                arg.ln()
            }
            Self::Sqrt(a) => {
                let arg = a.eval_inner(vars)?;
                if arg < T::zero() {
                    return Err(domain("sqrt", arg));
                }
                arg.sqrt()
            }
            Self::Tanh(a) => a.eval_inner(vars)?.tanh(),
            Self::Sigmoid(a) => {
                let arg = a.eval_inner(vars)?;
                T::one() / (T::one() + (-arg).exp())
            }
            Self::Neg(a) => -a.eval_inner(vars)?,
        })
    }

    /// Canonical, fully parenthesised text form over the given variable names.
    pub fn to_canonical(&self, names: &[String]) -> String {
        let mut out = String::new();
        self.write_canonical(names, &mut out);
        out
    }

    fn write_canonical(&self, names: &[String], out: &mut String) {
        use std::fmt::Write;
        let binary = |out: &mut String, a: &Self, op: &str, b: &Self| {
            out.push('(');
            a.write_canonical(names, out);
            out.push_str(op);
            b.write_canonical(names, out);
            out.push(')');
        };
        let call = |out: &mut String, name: &str, a: &Self| {
            out.push_str(name);
            out.push('(');
            a.write_canonical(names, out);
            out.push(')');
        };
        match self {
            Self::Const(c) => write_const(*c, out),
            Self::Var(i) => match names.get(*i) {
                Some(name) => out.push_str(name),
                None => {
                    let _ = write!(out, "v{i}");
                }
            },
            Self::Add(a, b) => binary(out, a, " + ", b),
            Self::Sub(a, b) => binary(out, a, " - ", b),
            Self::Mul(a, b) => binary(out, a, " * ", b),
            Self::Div(a, b) => binary(out, a, " / ", b),
            Self::Pow(a, e) => {
                out.push('(');
                a.write_canonical(names, out);
                out.push_str(" ^ ");
                write_const(*e, out);
                out.push(')');
            }
            Self::Exp(a) => call(out, "exp", a),
            Self::Ln(a) => call(out, "ln", a),
            Self::Sqrt(a) => call(out, "sqrt", a),
            Self::Tanh(a) => call(out, "tanh", a),
            Self::Sigmoid(a) => call(out, "sigmoid", a),
            Self::Neg(a) => {
                out.push_str("(-");
                a.write_canonical(names, out);
                out.push(')');
            }
        }
    }

    /// Conservative list of points and half-lines where the expression or
    /// its derivatives are undefined.
    pub fn singularities(&self) -> Vec<Singularity> {
        let mut found = Vec::new();
        self.visit(&mut |node| match node {
            Self::Div(_, den) => push_root(den, RootKind::Zero, &mut found),
            Self::Ln(arg) | Self::Sqrt(arg) => push_root(arg, RootKind::NonPositive, &mut found),
            Self::Pow(base, e) => {
                if e.fract() != 0.0 {
                    push_root(base, RootKind::NonPositive, &mut found);
                } else if *e < 0.0 {
                    push_root(base, RootKind::Zero, &mut found);
                }
            }
            _ => {}
        });
        found.dedup();
        found
    }
}

fn write_const(c: f64, out: &mut String) {
    use std::fmt::Write;
    if c.is_sign_negative() {
        let _ = write!(out, "(-{:?})", -c);
    } else {
        let _ = write!(out, "{c:?}");
    }
}

/// A region of one variable's axis excluded from the domain of a QoI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Singularity {
    /// The single point `var == at`.
    Point { var: usize, at: f64 },
    /// The half-line `var <= bound`.
    AtMost { var: usize, bound: f64 },
    /// The half-line `var >= bound`.
    AtLeast { var: usize, bound: f64 },
    /// The offending argument is not affine in one variable; only a direct
    /// evaluation can tell where it vanishes.
    Unresolved,
}

impl Singularity {
    /// Distance from `x` (a value of variable `var`) to the excluded set:
    /// zero when `x` lies inside it, `None` when the entry does not constrain
    /// this variable or cannot be resolved.
    pub fn distance(&self, var: usize, x: f64) -> Option<f64> {
        match *self {
            Self::Point { var: v, at } if v == var => Some((x - at).abs()),
            Self::AtMost { var: v, bound } if v == var => Some((x - bound).max(0.0)),
            Self::AtLeast { var: v, bound } if v == var => Some((bound - x).max(0.0)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy)]
enum RootKind {
    Zero,
    NonPositive,
}

/// `slope * x_var + intercept`, or a constant when `var` is `None`.
#[derive(Clone, Copy, Debug)]
struct Affine {
    var: Option<usize>,
    slope: f64,
    intercept: f64,
}

impl Affine {
    fn combine(a: Self, b: Self, sign: f64) -> Option<Self> {
        let var = match (a.var, b.var) {
            (Some(x), Some(y)) if x != y => return None,
            (x, y) => x.or(y),
        };
        Some(Self {
            var,
            slope: a.slope + sign * b.slope,
            intercept: a.intercept + sign * b.intercept,
        })
    }

    fn scale(self, k: f64) -> Self {
        Self {
            var: self.var,
            slope: self.slope * k,
            intercept: self.intercept * k,
        }
    }
}

fn affine(e: &Expr) -> Option<Affine> {
    match e {
        Expr::Const(c) => Some(Affine {
            var: None,
            slope: 0.0,
            intercept: *c,
        }),
        Expr::Var(i) => Some(Affine {
            var: Some(*i),
            slope: 1.0,
            intercept: 0.0,
        }),
        Expr::Add(a, b) => Affine::combine(affine(a)?, affine(b)?, 1.0),
        Expr::Sub(a, b) => Affine::combine(affine(a)?, affine(b)?, -1.0),
        Expr::Neg(a) => Some(affine(a)?.scale(-1.0)),
        Expr::Mul(a, b) => {
            let (a, b) = (affine(a)?, affine(b)?);
            match (a.var, b.var) {
                (None, _) => Some(b.scale(a.intercept)),
                (_, None) => Some(a.scale(b.intercept)),
                _ => None,
            }
        }
        Expr::Div(a, b) => {
            let (a, b) = (affine(a)?, affine(b)?);
            match b.var {
                None if b.intercept != 0.0 => Some(a.scale(1.0 / b.intercept)),
                _ => None,
            }
        }
        _ => None,
    }
}

fn push_root(arg: &Expr, kind: RootKind, out: &mut Vec<Singularity>) {
    let entry = match affine(arg) {
        // constant arguments either always or never fail; nothing per-variable to report
        Some(Affine { var: None, .. }) => return,
        Some(Affine {
            var: Some(var),
            slope,
            intercept,
        }) if slope != 0.0 => {
            let root = -intercept / slope;
            match kind {
                RootKind::Zero => Singularity::Point { var, at: root },
                RootKind::NonPositive if slope > 0.0 => Singularity::AtMost { var, bound: root },
                RootKind::NonPositive => Singularity::AtLeast { var, bound: root },
            }
        }
        _ => Singularity::Unresolved,
    };
    if !out.contains(&entry) {
        out.push(entry);
    }
}

/// Univariate QoI `f` with its first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateBundle {
    pub var: String,
    pub f: Expr,
    pub first: Expr,
    pub second: Expr,
    pub singularities: Vec<Singularity>,
}

impl UnivariateBundle {
    pub fn new(var: impl Into<String>, f: Expr) -> Self {
        let first = f.derivative(0);
        let second = first.derivative(0);
        let singularities = f.singularities();
        Self {
            var: var.into(),
            f,
            first,
            second,
            singularities,
        }
    }

    /// Parses `text` over the single variable `x`.
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        Self::parse_with_var(text, "x")
    }

    pub fn parse_with_var(text: &str, var: &str) -> Result<Self, ExprError> {
        let names = [var.to_string()];
        Ok(Self::new(var, parse_expr(text, &names)?))
    }

    /// The identity QoI `f(x) = x`.
    pub fn identity() -> Self {
        Self::new("x", Expr::Var(0))
    }

    pub fn canonical(&self) -> String {
        self.f.to_canonical(std::slice::from_ref(&self.var))
    }

    pub fn has_unresolved_singularity(&self) -> bool {
        self.singularities.contains(&Singularity::Unresolved)
    }

    /// Distance from `x` to the nearest resolved singularity (infinite if none).
    pub fn singularity_distance(&self, x: f64) -> f64 {
        self.singularities
            .iter()
            .filter_map(|s| s.distance(0, x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Multivariate QoI `F` with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateBundle {
    pub vars: Vec<String>,
    pub f: Expr,
    pub partials: Vec<Expr>,
}

impl MultivariateBundle {
    pub fn new(vars: Vec<String>, f: Expr) -> Self {
        let partials = (0..vars.len()).map(|j| f.derivative(j)).collect();
        Self { vars, f, partials }
    }

    pub fn parse(text: &str, vars: &[&str]) -> Result<Self, ExprError> {
        let names: Vec<String> = vars.iter().map(|s| (*s).to_string()).collect();
        let f = parse_expr(text, &names)?;
        Ok(Self::new(names, f))
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn canonical(&self) -> String {
        self.f.to_canonical(&self.vars)
    }
}

impl fmt::Display for UnivariateBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Vec<String> {
        vec!["x".to_string()]
    }

    fn central_first(f: &Expr, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f.eval(&[x + h]).unwrap() - f.eval(&[x - h]).unwrap()) / (2.0 * h)
    }

    #[test]
    fn eval_examples() {
        let sq = parse_expr("x^2", &x()).unwrap();
        assert_eq!(sq.eval(&[3.0f64]).unwrap(), 9.0);
        let l2 = parse_expr("log2(x)", &x()).unwrap();
        assert!((l2.eval(&[8.0f64]).unwrap() - 3.0).abs() < 1e-15);
        let s = parse_expr("sigmoid(x)", &x()).unwrap();
        assert_eq!(s.eval(&[0.0f64]).unwrap(), 0.5);
        // generic over the scalar type
        assert_eq!(sq.eval(&[3.0f32]).unwrap(), 9.0f32);
    }

    #[test]
    fn eval_domain_errors() {
        let inv = parse_expr("1/(x+2)", &x()).unwrap();
        assert!(matches!(
            inv.eval(&[-2.0f64]),
            Err(EvalError::Domain { op: "division", .. })
        ));
        let ln = parse_expr("ln(x)", &x()).unwrap();
        assert!(matches!(ln.eval(&[0.0f64]), Err(EvalError::Domain { .. })));
        let big = parse_expr("exp(x)", &x()).unwrap();
        assert_eq!(big.eval(&[1000.0f64]), Err(EvalError::NonFinite));
        let root = parse_expr("x^0.5", &x()).unwrap();
        assert!(root.eval(&[-1.0f64]).is_err());
    }

    #[test]
    fn derivative_examples() {
        let d = parse_expr("x^2", &x()).unwrap().derivative(0);
        assert_eq!(d, Expr::mul(Expr::Const(2.0), Expr::Var(0)));
        assert_eq!(d.to_canonical(&x()), "(2.0 * x)");

        let log2 = parse_expr("log2(x)", &x()).unwrap();
        let d = log2.derivative(0);
        let at3 = d.eval(&[3.0f64]).unwrap();
        assert!((at3 - 1.0 / (3.0 * std::f64::consts::LN_2)).abs() < 1e-15);
        assert!((at3 - central_first(&log2, 3.0)).abs() / at3 < 1e-5);

        let ex = parse_expr("e^x", &x()).unwrap();
        assert_eq!(ex.derivative(0), ex);
    }

    #[test]
    fn singularity_examples() {
        let s = parse_expr("1/(x+2)", &x()).unwrap().singularities();
        assert_eq!(s, vec![Singularity::Point { var: 0, at: -2.0 }]);
        let s = parse_expr("log2(x)", &x()).unwrap().singularities();
        assert_eq!(s, vec![Singularity::AtMost { var: 0, bound: 0.0 }]);
        assert!(parse_expr("x^3", &x()).unwrap().singularities().is_empty());
        let s = parse_expr("sqrt(3 - 2*x)", &x()).unwrap().singularities();
        assert_eq!(s, vec![Singularity::AtLeast { var: 0, bound: 1.5 }]);
        let s = parse_expr("ln(x^2 + 1)", &x()).unwrap().singularities();
        assert_eq!(s, vec![Singularity::Unresolved]);
        let s = parse_expr("x^(-1)", &x()).unwrap().singularities();
        assert_eq!(s, vec![Singularity::Point { var: 0, at: 0.0 }]);
    }

    #[test]
    fn singularity_distance() {
        let b = UnivariateBundle::parse("1/(x+273.15)").unwrap();
        assert!((b.singularity_distance(-270.0) - 3.15).abs() < 1e-12);
        let b = UnivariateBundle::parse("x^2").unwrap();
        assert_eq!(b.singularity_distance(5.0), f64::INFINITY);
    }

    #[test]
    fn multivariate_partials() {
        let b = MultivariateBundle::parse("x*y*z", &["x", "y", "z"]).unwrap();
        let p: Vec<f64> = b
            .partials
            .iter()
            .map(|d| d.eval(&[1.0, 2.0, 3.0]).unwrap())
            .collect();
        assert_eq!(p, vec![6.0, 3.0, 2.0]);
    }

    #[test]
    fn eval_is_bit_deterministic() {
        let e = parse_expr("sqrt(x^2 + 1) * tanh(x) / (x + 7)", &x()).unwrap();
        let a: f64 = e.eval(&[0.3712]).unwrap();
        let b: f64 = e.eval(&[0.3712]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
