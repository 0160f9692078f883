//! Expression strings for scalar fields.
//!
//! A small recursive-descent parser producing an AST that evaluates to a
//! [`Jet`] (value and both chart partials) by forward-mode differentiation.
//! Variables: `p`, `q` on the torus and plane; `z`, `phi`, `x`, `y` on the
//! sphere, where `x = √(1−z²) cos φ`, `y = √(1−z²) sin φ`.

use std::fmt;

use crate::error::{Error, Result};
use crate::fields::Jet;
use crate::geometry::{Point, SurfaceKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    P,
    Q,
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Sinh,
    Cosh,
    Atan,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "atan" => Func::Atan,
            _ => return None,
        })
    }

    /// Value and derivative of the function at `v`.
    fn eval(self, v: f64) -> (f64, f64) {
        match self {
            Func::Sin => (v.sin(), v.cos()),
            Func::Cos => (v.cos(), -v.sin()),
            Func::Tan => {
                let t = v.tan();
                (t, 1.0 + t * t)
            }
            Func::Exp => {
                let e = v.exp();
                (e, e)
            }
            Func::Ln => (v.ln(), 1.0 / v),
            Func::Sqrt => {
                let s = v.sqrt();
                (s, 0.5 / s)
            }
            Func::Abs => (v.abs(), v.signum()),
            Func::Tanh => {
                let t = v.tanh();
                (t, 1.0 - t * t)
            }
            Func::Sinh => (v.sinh(), v.cosh()),
            Func::Cosh => (v.cosh(), v.sinh()),
            Func::Atan => (v.atan(), 1.0 / (1.0 + v * v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str, kind: SurfaceKind) -> Result<Expr> {
        let mut p = Parser {
            toks: tokenize(src)?,
            pos: 0,
            kind,
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expression(format!(
                "unexpected {} in {src:?}",
                p.toks[p.pos]
            )));
        }
        Ok(e)
    }

    /// Whether the expression depends on no variable.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Value and chart partials at `x`.
    pub fn eval(&self, x: Point) -> Jet {
        match self {
            Expr::Num(c) => Jet::constant(*c),
            Expr::Var(v) => var_jet(*v, x),
            Expr::Neg(a) => a.eval(x).scale(-1.0),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => {
                let (u, v) = (a.eval(x), b.eval(x));
                let w = u.value / v.value;
                Jet {
                    value: w,
                    dp: (u.dp - w * v.dp) / v.value,
                    dq: (u.dq - w * v.dq) / v.value,
                }
            }
            Expr::Pow(a, b) => {
                let u = a.eval(x);
                if b.is_constant() {
                    let k = b.eval(x).value;
                    let d = if k == 0.0 { 0.0 } else { k * u.value.powf(k - 1.0) };
                    Jet {
                        value: u.value.powf(k),
                        dp: d * u.dp,
                        dq: d * u.dq,
                    }
                } else {
                    let v = b.eval(x);
                    let w = u.value.powf(v.value);
                    let ln = u.value.ln();
                    Jet {
                        value: w,
                        dp: w * (v.dp * ln + v.value * u.dp / u.value),
                        dq: w * (v.dq * ln + v.value * u.dq / u.value),
                    }
                }
            }
            Expr::Call(f, a) => {
                let u = a.eval(x);
                let (v, d) = f.eval(u.value);
                Jet {
                    value: v,
                    dp: d * u.dp,
                    dq: d * u.dq,
                }
            }
        }
    }
}

fn var_jet(v: Var, x: Point) -> Jet {
    match v {
        Var::P => Jet {
            value: x.p,
            dp: 1.0,
            dq: 0.0,
        },
        Var::Q => Jet {
            value: x.q,
            dp: 0.0,
            dq: 1.0,
        },
        // Sphere chart (z, φ) = (p, q).
        Var::X | Var::Y => {
            let r = (1.0 - x.p * x.p).max(0.0).sqrt();
            let dr = if r > 0.0 { -x.p / r } else { 0.0 };
            let (s, c) = x.q.sin_cos();
            if v == Var::X {
                Jet {
                    value: r * c,
                    dp: dr * c,
                    dq: -r * s,
                }
            } else {
                Jet {
                    value: r * s,
                    dp: dr * s,
                    dq: r * c,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier {s:?}"),
            Tok::Op(c) => write!(f, "{c:?}"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
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
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number {s:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    kind: SurfaceKind,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.toks.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression(format!("expected {c:?}")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // Right-associative; binds tighter than unary minus: -x^2 = -(x^2).
    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let tok = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Expression("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Op(c) => Err(Error::Expression(format!("unexpected {c:?}"))),
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                self.variable(&name)
            }
        }
    }

    fn variable(&self, name: &str) -> Result<Expr> {
        let sphere = self.kind == SurfaceKind::RoundSphere;
        let v = match (name, sphere) {
            ("pi", _) => return Ok(Expr::Num(std::f64::consts::PI)),
            ("e", _) => return Ok(Expr::Num(std::f64::consts::E)),
            ("p", false) | ("z", true) => Var::P,
            ("q", false) | ("phi", true) => Var::Q,
            ("x", true) => Var::X,
            ("y", true) => Var::Y,
            _ => {
                return Err(Error::Expression(format!(
                    "unknown variable {name:?} on {}",
                    self.kind
                )))
            }
        };
        Ok(Expr::Var(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn jet(src: &str, kind: SurfaceKind, x: Point) -> Jet {
        Expr::parse(src, kind).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_partials() {
        let t = SurfaceKind::FlatTorus;
        let j = jet("-p^2 + 3*q/2", t, Point::new(2.0, 4.0));
        assert_abs_diff_eq!(j.value, -4.0 + 6.0);
        assert_abs_diff_eq!(j.dp, -4.0);
        assert_abs_diff_eq!(j.dq, 1.5);
        let j = jet("sin(2*pi*p)*exp(q)", t, Point::new(0.1, 0.0));
        let w = 2.0 * std::f64::consts::PI;
        assert_abs_diff_eq!(j.dp, w * (w * 0.1).cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(j.dq, (w * 0.1).sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(jet("2^3^2", t, Point::default()).value, 512.0);
        assert_abs_diff_eq!(jet("1.5e-1", t, Point::default()).value, 0.15);
    }

    #[test]
    fn sphere_ambient_coordinates() {
        let s = SurfaceKind::RoundSphere;
        let x = Point::new(0.3, 1.1);
        let a = jet("x^2 + y^2 + z^2", s, x);
        assert_abs_diff_eq!(a.value, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a.dp, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a.dq, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let t = SurfaceKind::FlatTorus;
        assert!(Expr::parse("p +", t).is_err());
        assert!(Expr::parse("z", t).is_err());
        assert!(Expr::parse("sin p", t).is_err());
        assert!(Expr::parse("(p", t).is_err());
        assert!(Expr::parse("p $ q", t).is_err());
    }
}
