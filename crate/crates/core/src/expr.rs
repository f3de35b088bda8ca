//! Expression language for operator entries and nonlinearities.
//!
//! Grammar: sums, products, integer powers, parentheses, rational literals,
//! `pi`, `i`, `t`, state variables `u1..un`, parameters `mu1..mud`, named
//! constants, and `cos`/`sin` whose argument must be `2 pi m t` for an
//! integer `m`. Division is allowed only by nonzero rational constants.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::poly::{MultiPoly, TrigPoly};
use crate::scalar::{ExactComplex, PiRational};

/// Parse failure located by byte offset into the parsed text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

impl ExprError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

pub type SymPoly = MultiPoly<ExactComplex>;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn parse_number(text: &str, start: usize) -> Result<(BigRational, usize), ExprError> {
    let bytes = text.as_bytes();
    let mut i = start;
    let mut digits = String::new();
    let mut frac_len = 0u32;
    let mut seen_dot = false;
    while i < bytes.len() && (bytes[i].is_ascii_digit() || (bytes[i] == b'.' && !seen_dot)) {
        if bytes[i] == b'.' {
            seen_dot = true;
        } else {
            digits.push(bytes[i] as char);
            if seen_dot {
                frac_len += 1;
            }
        }
        i += 1;
    }
    if digits.is_empty() {
        return Err(ExprError::new(start, "malformed number"));
    }
    let mut exp: i64 = 0;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        let mut sign = 1i64;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            if bytes[j] == b'-' {
                sign = -1;
            }
            j += 1;
        }
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j == exp_start {
            return Err(ExprError::new(i, "malformed exponent"));
        }
        exp = sign
            * text[exp_start..j]
                .parse::<i64>()
                .map_err(|_| ExprError::new(exp_start, "exponent out of range"))?;
        i = j;
    }
    let mantissa: BigInt = digits.parse().expect("digits only");
    let total = exp - frac_len as i64;
    if total.abs() > 400 {
        return Err(ExprError::new(start, "exponent out of range"));
    }
    let ten = BigInt::from(10);
    let value = if total >= 0 {
        BigRational::from_integer(mantissa * num_traits::pow(ten, total as usize))
    } else {
        BigRational::new(mantissa, num_traits::pow(ten, (-total) as usize))
    };
    Ok((value, i))
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let (v, next) = parse_number(text, i)?;
            out.push(Token { tok: Tok::Num(v), pos: i });
            i = next;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^".contains(c) {
            out.push(Token { tok: Tok::Op(c), pos: i });
            i += 1;
        } else if c == '(' {
            out.push(Token { tok: Tok::LParen, pos: i });
            i += 1;
        } else if c == ')' {
            out.push(Token { tok: Tok::RParen, pos: i });
            i += 1;
        } else {
            return Err(ExprError::new(i, format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Node {
    Num(BigRational),
    Ident(String),
    Neg(Box<Spanned>),
    Bin(char, Box<Spanned>, Box<Spanned>),
    Pow(Box<Spanned>, u32),
    Call(String, Box<Spanned>),
}

#[derive(Debug, Clone)]
struct Spanned {
    node: Node,
    pos: usize,
}

struct Parser {
    toks: Vec<Token>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end, |t| t.pos)
    }

    fn expr(&mut self) -> Result<Spanned, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            let pos = lhs.pos;
            self.idx += 1;
            let rhs = self.term()?;
            lhs = Spanned {
                node: Node::Bin(op, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Spanned, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            let pos = lhs.pos;
            self.idx += 1;
            let rhs = self.unary()?;
            lhs = Spanned {
                node: Node::Bin(op, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Spanned, ExprError> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.idx += 1;
                let inner = self.unary()?;
                Ok(Spanned {
                    node: Node::Neg(Box::new(inner)),
                    pos,
                })
            }
            Some(Tok::Op('+')) => {
                self.idx += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Spanned, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            let pos = self.pos();
            self.idx += 1;
            let exp_pos = self.pos();
            let exp = match self.peek().cloned() {
                Some(Tok::Num(v)) if v.is_integer() => {
                    self.idx += 1;
                    v.to_integer()
                        .to_u32()
                        .filter(|e| *e <= 64)
                        .ok_or_else(|| ExprError::new(exp_pos, "exponent must be an integer in 0..=64"))?
                }
                _ => return Err(ExprError::new(exp_pos, "exponent must be a non-negative integer literal")),
            };
            return Ok(Spanned {
                node: Node::Pow(Box::new(base), exp),
                pos,
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Spanned, ExprError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.idx += 1;
                Ok(Spanned { node: Node::Num(v), pos })
            }
            Some(Tok::Ident(name)) => {
                self.idx += 1;
                if let Some(Tok::LParen) = self.peek() {
                    self.idx += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Spanned {
                        node: Node::Call(name, Box::new(arg)),
                        pos,
                    });
                }
                Ok(Spanned {
                    node: Node::Ident(name),
                    pos,
                })
            }
            Some(Tok::LParen) => {
                self.idx += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(tok) => Err(ExprError::new(pos, format!("unexpected token {tok:?}"))),
            None => Err(ExprError::new(pos, "unexpected end of expression")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(ExprError::new(self.pos(), "expected ')'")),
        }
    }
}

fn parse_tree(text: &str) -> Result<Spanned, ExprError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: text.len(),
    };
    let tree = p.expr()?;
    if p.idx != p.toks.len() {
        return Err(ExprError::new(p.pos(), "trailing input"));
    }
    Ok(tree)
}

/// Symbols visible to an expression.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub n_vars: usize,
    pub n_params: usize,
    pub allow_u: bool,
    pub constants: BTreeMap<String, ExactComplex>,
}

pub const RESERVED: &[&str] = &["t", "pi", "i", "cos", "sin"];

/// Parses an identifier of the form `<prefix><index>` with a 1-based index.
fn indexed(name: &str, prefix: &str) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

/// True when `name` would shadow a built-in symbol or a variable.
pub fn is_reserved(name: &str) -> bool {
    RESERVED.contains(&name) || indexed(name, "u").is_some() || indexed(name, "mu").is_some()
}

/// Affine form `a t + b` used for trigonometric arguments.
struct LinearT {
    slope: ExactComplex,
    offset: ExactComplex,
}

impl Scope {
    pub fn parse(&self, text: &str) -> Result<SymPoly, ExprError> {
        let tree = parse_tree(text)?;
        self.eval(&tree)
    }

    /// Parses an expression that must be a constant.
    pub fn parse_constant(&self, text: &str) -> Result<ExactComplex, ExprError> {
        let p = self.parse(text)?;
        p.as_trig()
            .filter(TrigPoly::is_constant)
            .map(|tp| tp.constant_term().clone())
            .ok_or_else(|| ExprError::new(0, "expected a constant expression"))
    }

    fn n(&self) -> usize {
        self.n_vars
    }

    fn d(&self) -> usize {
        self.n_params
    }

    fn constant(&self, c: ExactComplex) -> SymPoly {
        MultiPoly::constant(self.n(), self.d(), c)
    }

    fn eval(&self, s: &Spanned) -> Result<SymPoly, ExprError> {
        match &s.node {
            Node::Num(v) => Ok(self.constant(ExactComplex::from_rational(v.clone()))),
            Node::Ident(name) => self.ident(name, s.pos),
            Node::Neg(inner) => Ok(self.eval(inner)?.neg()),
            Node::Bin(op, a, b) => {
                let lhs = self.eval(a)?;
                match op {
                    '+' => Ok(lhs.add(&self.eval(b)?)),
                    '-' => Ok(lhs.sub(&self.eval(b)?)),
                    '*' => Ok(lhs.mul(&self.eval(b)?)),
                    '/' => {
                        let r = self.rational_divisor(b)?;
                        Ok(lhs.scale(&ExactComplex::from_rational(r.recip())))
                    }
                    _ => unreachable!("operator set is closed"),
                }
            }
            Node::Pow(base, e) => Ok(self.eval(base)?.pow(*e)),
            Node::Call(name, arg) => {
                let m = self.harmonic(arg)?;
                let trig = match name.as_str() {
                    "cos" => TrigPoly::cos(m.unsigned_abs() as usize),
                    "sin" if m >= 0 => TrigPoly::sin(m as usize),
                    "sin" => TrigPoly::sin(m.unsigned_abs() as usize).neg(),
                    other => return Err(ExprError::new(s.pos, format!("unknown function '{other}'"))),
                };
                Ok(MultiPoly::from_trig(self.n(), self.d(), trig))
            }
        }
    }

    fn ident(&self, name: &str, pos: usize) -> Result<SymPoly, ExprError> {
        match name {
            "pi" => return Ok(self.constant(ExactComplex::real(PiRational::pi()))),
            "i" => return Ok(self.constant(ExactComplex::i())),
            "t" => return Err(ExprError::new(pos, "'t' may only appear inside cos/sin arguments")),
            _ => {}
        }
        if let Some(k) = indexed(name, "u") {
            if !self.allow_u {
                return Err(ExprError::new(pos, format!("state variable '{name}' not allowed here")));
            }
            if k > self.n() {
                return Err(ExprError::new(pos, format!("'{name}' exceeds dimension {}", self.n())));
            }
            return Ok(MultiPoly::u_var(self.n(), self.d(), k - 1));
        }
        if let Some(k) = indexed(name, "mu") {
            if k > self.d() {
                return Err(ExprError::new(pos, format!("'{name}' exceeds parameter count {}", self.d())));
            }
            return Ok(MultiPoly::mu_var(self.n(), self.d(), k - 1));
        }
        self.constants
            .get(name)
            .map(|c| self.constant(c.clone()))
            .ok_or_else(|| ExprError::new(pos, format!("unknown symbol '{name}'")))
    }

    fn rational_divisor(&self, s: &Spanned) -> Result<BigRational, ExprError> {
        let value = self.eval(s)?;
        let r = value
            .as_trig()
            .filter(TrigPoly::is_constant)
            .and_then(|tp| tp.constant_term().as_rational())
            .ok_or_else(|| ExprError::new(s.pos, "division only by rational constants"))?;
        if r.is_zero() {
            return Err(ExprError::new(s.pos, "division by zero"));
        }
        Ok(r)
    }

    fn linear(&self, s: &Spanned) -> Result<LinearT, ExprError> {
        let konst = |c: ExactComplex| LinearT {
            slope: ExactComplex::zero(),
            offset: c,
        };
        match &s.node {
            Node::Num(v) => Ok(konst(ExactComplex::from_rational(v.clone()))),
            Node::Ident(name) if name == "t" => Ok(LinearT {
                slope: ExactComplex::one(),
                offset: ExactComplex::zero(),
            }),
            Node::Ident(name) => {
                let v = self.ident(name, s.pos)?;
                let c = v
                    .as_trig()
                    .filter(TrigPoly::is_constant)
                    .map(|tp| tp.constant_term().clone())
                    .ok_or_else(|| ExprError::new(s.pos, "trigonometric argument must be 2*pi*m*t"))?;
                Ok(konst(c))
            }
            Node::Neg(inner) => {
                let l = self.linear(inner)?;
                Ok(LinearT {
                    slope: -l.slope,
                    offset: -l.offset,
                })
            }
            Node::Bin(op, a, b) => {
                let la = self.linear(a)?;
                let lb = self.linear(b)?;
                match op {
                    '+' => Ok(LinearT {
                        slope: la.slope + lb.slope,
                        offset: la.offset + lb.offset,
                    }),
                    '-' => Ok(LinearT {
                        slope: la.slope - lb.slope,
                        offset: la.offset - lb.offset,
                    }),
                    '*' if la.slope.is_zero() => Ok(LinearT {
                        slope: la.offset.clone() * lb.slope,
                        offset: la.offset * lb.offset,
                    }),
                    '*' if lb.slope.is_zero() => Ok(LinearT {
                        slope: lb.offset.clone() * la.slope,
                        offset: lb.offset * la.offset,
                    }),
                    '/' => {
                        let r = self.rational_divisor(b)?.recip();
                        Ok(LinearT {
                            slope: la.slope.scale(&r),
                            offset: la.offset.scale(&r),
                        })
                    }
                    _ => Err(ExprError::new(s.pos, "trigonometric argument must be linear in t")),
                }
            }
            _ => Err(ExprError::new(s.pos, "trigonometric argument must be 2*pi*m*t")),
        }
    }

    fn harmonic(&self, arg: &Spanned) -> Result<i64, ExprError> {
        let lin = self.linear(arg)?;
        if !lin.offset.is_zero() {
            return Err(ExprError::new(
                arg.pos,
                "phase shifts are not supported; use cos and sin of 2*pi*m*t",
            ));
        }
        let k = if lin.slope.im.is_zero() {
            lin.slope.re.as_pi_multiple()
        } else {
            None
        };
        let two = BigRational::from_integer(BigInt::from(2));
        let m = k
            .map(|k| k / two)
            .filter(|m| m.is_integer())
            .ok_or_else(|| ExprError::new(arg.pos, "trigonometric argument must be 2*pi*m*t with integer m (period one)"))?;
        m.to_integer()
            .to_i64()
            .filter(|m| m.abs() <= 4096)
            .ok_or_else(|| ExprError::new(arg.pos, "harmonic index too large"))
    }
}

/// Exact rational parsed from a literal such as `-3/4` or `0.125`.
pub fn parse_rational(text: &str) -> Result<BigRational, ExprError> {
    let scope = Scope::default();
    scope
        .parse_constant(text)?
        .as_rational()
        .ok_or_else(|| ExprError::new(0, "expected a rational number"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scope(n: usize, d: usize) -> Scope {
        Scope {
            n_vars: n,
            n_params: d,
            allow_u: true,
            constants: BTreeMap::new(),
        }
    }

    #[test]
    fn cosine_harmonic() {
        let p = scope(1, 0).parse("1 + cos(2*pi*t)").unwrap();
        let tp = p.as_trig().unwrap().to_numeric();
        assert_abs_diff_eq!(tp.eval(0.25).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tp.eval(0.0).re, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn higher_harmonic_and_negative_argument() {
        let p = scope(1, 0).parse("sin(-4*pi*t)").unwrap();
        let tp = p.as_trig().unwrap();
        assert_eq!(tp.sin_coefficient(2), -ExactComplex::one());
    }

    #[test]
    fn rejects_non_periodic_argument() {
        let err = scope(1, 0).parse("cos(3*t)").unwrap_err();
        assert!(err.message.contains("period one"));
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn rejects_bare_time() {
        assert!(scope(1, 0).parse("t*u1").is_err());
    }

    #[test]
    fn decimal_literals_are_exact() {
        assert_eq!(parse_rational("0.125").unwrap(), BigRational::new(1.into(), 8.into()));
        assert_eq!(parse_rational("1e-3").unwrap(), BigRational::new(1.into(), 1000.into()));
        assert_eq!(parse_rational("-3/4").unwrap(), BigRational::new((-3).into(), 4.into()));
    }

    #[test]
    fn division_by_variable_fails() {
        assert!(scope(2, 0).parse("u1/u2").is_err());
        assert!(scope(2, 0).parse("u1/0").is_err());
    }

    #[test]
    fn polynomial_products() {
        let p = scope(2, 1).parse("(u1 + mu1)^2").unwrap();
        let v = p.to_numeric().eval(0.0, &[0.5], &[2.0.into(), 0.0.into()]);
        assert_abs_diff_eq!(v.re, 6.25, epsilon = 1e-14);
    }

    #[test]
    fn out_of_range_variable() {
        let err = scope(2, 0).parse("u3").unwrap_err();
        assert!(err.message.contains("dimension"));
    }
}
