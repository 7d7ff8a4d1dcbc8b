//! Recursive-descent parser.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := power (('*' | '/') power)*
//! power   := unary ('^' power)?
//! unary   := ('-' | '+') unary | primary
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Unary minus binds tighter than `^`, and `^` is right-associative.

use super::{Expr, ExprError};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(u8),
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(text: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let done = tok == Tok::Eof;
            out.push((tok, at));
            if done {
                return Ok(out);
            }
        }
    }

    fn peek_at(&self, i: usize) -> Option<u8> {
        self.src.get(i).copied()
    }

    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        while self.peek_at(self.pos).is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(c) = self.peek_at(start) else {
            return Ok((Tok::Eof, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self
                .peek_at(self.pos)
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
            {
                self.pos += 1;
            }
            let name = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
            return Ok((Tok::Ident(name), start));
        }
        if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Op(c), start));
        }
        Err(ExprError::Syntax {
            offset: start,
            message: format!("unexpected character {:?}", char::from(c)),
        })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ExprError> {
        let digits = |lx: &mut Self| {
            while lx.peek_at(lx.pos).is_some_and(|c| c.is_ascii_digit()) {
                lx.pos += 1;
            }
        };
        digits(self);
        if self.peek_at(self.pos) == Some(b'.') {
            self.pos += 1;
            digits(self);
        }
        // exponent only when followed by a digit, so `2e` stays `2` then `e`
        if matches!(self.peek_at(self.pos), Some(b'e' | b'E')) {
            let mut look = self.pos + 1;
            if matches!(self.peek_at(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if self.peek_at(look).is_some_and(|c| c.is_ascii_digit()) {
                self.pos = look;
                digits(self);
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        text.parse::<f64>()
            .map(|v| (Tok::Num(v), start))
            .map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number {text:?}"),
            })
    }
}

struct Parser<'n> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    names: &'n [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, op: u8) -> Result<(), ExprError> {
        if *self.peek() == Tok::Op(op) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected `{}`", char::from(op))))
        }
    }

    fn unexpected(&self, what: &str) -> ExprError {
        let found = match self.peek() {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("`{}`", char::from(*c)),
            Tok::Eof => "end of input".to_string(),
        };
        ExprError::Syntax {
            offset: self.offset(),
            message: format!("{what}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op(b'+') => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Op(b'-') => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.power()?;
        loop {
            match self.peek() {
                Tok::Op(b'*') => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.power()?);
                }
                Tok::Op(b'/') => {
                    self.bump();
                    lhs = Expr::div(lhs, self.power()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.unary()?;
        if *self.peek() != Tok::Op(b'^') {
            return Ok(base);
        }
        let (_, caret) = self.bump();
        let exponent = self.power()?;
        match (base, exponent) {
            (base, Expr::Const(k)) => Ok(Expr::pow(base, k)),
            (Expr::Const(b), exponent) if b > 0.0 => Ok(Expr::const_base_pow(b, exponent)),
            _ => Err(ExprError::VariableExponent { offset: caret }),
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Tok::Op(b'-') => {
                self.bump();
                Ok(Expr::neg(self.unary()?))
            }
            Tok::Op(b'+') => {
                self.bump();
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.bump() {
            (Tok::Num(v), _) => Ok(Expr::Const(v)),
            (Tok::Op(b'('), _) => {
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            (Tok::Ident(name), at) => {
                if *self.peek() == Tok::Op(b'(') {
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    return apply_function(&name, arg, at);
                }
                if let Some(i) = self.names.iter().position(|n| *n == name) {
                    return Ok(Expr::Var(i));
                }
                match name.as_str() {
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    _ => Err(ExprError::UnknownIdentifier { name, offset: at }),
                }
            }
            (Tok::Eof, at) if at == 0 => Err(ExprError::Empty),
            _ => {
                self.at = self.at.saturating_sub(1);
                Err(self.unexpected("expected a value"))
            }
        }
    }
}

fn apply_function(name: &str, arg: Expr, at: usize) -> Result<Expr, ExprError> {
    Ok(match name {
        "exp" => Expr::exp(arg),
        "exp2" => Expr::const_base_pow(2.0, arg),
        "ln" | "log" => Expr::ln(arg),
        "log2" => Expr::log2(arg),
        "log10" => Expr::div(Expr::ln(arg), Expr::Const(std::f64::consts::LN_10)),
        "sqrt" => Expr::sqrt(arg),
        "tanh" => Expr::tanh(arg),
        "sigmoid" => Expr::sigmoid(arg),
        _ => {
            return Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                offset: at,
            })
        }
    })
}

/// Parses `text` into an expression over the declared variable names.
pub fn parse_expr(text: &str, names: &[String]) -> Result<Expr, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Empty);
    }
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, at: 0, names };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("expected an operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xyz() -> Vec<String> {
        ["x", "y", "z"].iter().map(|s| (*s).to_string()).collect()
    }

    fn p(s: &str) -> Expr {
        parse_expr(s, &xyz()).unwrap()
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(p("x^2"), Expr::Pow(Box::new(Expr::Var(0)), 2.0));
        assert_eq!(
            p("1/(x+273.15)"),
            Expr::Div(
                Box::new(Expr::Const(1.0)),
                Box::new(Expr::Add(
                    Box::new(Expr::Var(0)),
                    Box::new(Expr::Const(273.15))
                ))
            )
        );
        assert!(matches!(p("sqrt(x^2+y^2+z^2)"), Expr::Sqrt(inner) if matches!(*inner, Expr::Add(..))));
    }

    #[test]
    fn precedence_and_associativity() {
        // right-associative power: 2^3^2 = 2^9
        assert_eq!(p("2^3^2"), Expr::Const(512.0));
        // unary minus binds tighter than ^
        assert_eq!(p("-x^2"), Expr::pow(Expr::neg(Expr::Var(0)), 2.0));
        assert_eq!(
            p("x + y * z"),
            Expr::add(Expr::Var(0), Expr::mul(Expr::Var(1), Expr::Var(2)))
        );
        assert_eq!(
            p("x - y - z"),
            Expr::sub(Expr::sub(Expr::Var(0), Expr::Var(1)), Expr::Var(2))
        );
        assert_eq!(p("x^-1"), Expr::pow(Expr::Var(0), -1.0));
        assert_eq!(p("1.5e-3"), Expr::Const(1.5e-3));
    }

    #[test]
    fn constant_base_powers_lower_to_exp() {
        assert_eq!(p("e^x"), Expr::exp(Expr::Var(0)));
        let two_x = p("2^x");
        assert!((two_x.eval(&[3.0f64, 0.0, 0.0]).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(p("exp2(x)"), two_x);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_expr("x +* 2", &xyz()),
            Err(ExprError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expr("x + w", &xyz()),
            Err(ExprError::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expr("x^y", &xyz()),
            Err(ExprError::VariableExponent { offset: 1 })
        ));
        assert!(matches!(
            parse_expr("foo(x)", &xyz()),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert_eq!(parse_expr("  ", &xyz()), Err(ExprError::Empty));
        assert!(matches!(
            parse_expr("(x + 1", &xyz()),
            Err(ExprError::Syntax { offset: 6, .. })
        ));
        assert!(matches!(
            parse_expr("x $ 1", &xyz()),
            Err(ExprError::Syntax { offset: 2, .. })
        ));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-50i32..50).prop_map(|v| Expr::Const(f64::from(v) / 4.0)),
            (0usize..3).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
                (inner.clone(), -3i32..4).prop_map(|(a, k)| Expr::pow(a, f64::from(k) / 2.0)),
                inner.clone().prop_map(Expr::exp),
                inner.clone().prop_map(Expr::ln),
                inner.clone().prop_map(Expr::sqrt),
                inner.clone().prop_map(Expr::tanh),
                inner.clone().prop_map(Expr::sigmoid),
                inner.prop_map(Expr::neg),
            ]
        })
    }

    fn all_finite(e: &Expr) -> bool {
        let mut ok = true;
        e.visit(&mut |n| {
            if let Expr::Const(c) | Expr::Pow(_, c) = n {
                ok &= c.is_finite();
            }
        });
        ok
    }

    proptest! {
        #[test]
        fn canonical_print_roundtrips(e in arb_expr().prop_filter("finite literals", all_finite)) {
            let names = xyz();
            let text = e.to_canonical(&names);
            let back = parse_expr(&text, &names).unwrap();
            prop_assert_eq!(back, e, "text: {}", text);
        }
    }
}
