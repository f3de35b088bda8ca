//! Coefficient scalars.
//!
//! Symbolic data (trigonometric polynomials, nonlinearities) is generic over
//! a [`Coefficient`]. Problem files are parsed into the exact ring
//! `Q[pi] + i Q[pi]` and specialised to `Complex64` for numerics.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub trait Coefficient:
    Clone
    + PartialEq
    + fmt::Debug
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn half(&self) -> Self;
    fn to_complex(&self) -> Complex64;
    fn is_real(&self) -> bool;
}

impl Coefficient for f64 {
    fn half(&self) -> Self {
        0.5 * self
    }
    fn to_complex(&self) -> Complex64 {
        Complex64::new(*self, 0.0)
    }
    fn is_real(&self) -> bool {
        true
    }
}

impl Coefficient for Complex64 {
    fn half(&self) -> Self {
        self * 0.5
    }
    fn to_complex(&self) -> Complex64 {
        *self
    }
    fn is_real(&self) -> bool {
        self.im == 0.0
    }
}

/// Element of `Q[pi]`, stored as a map from the power of pi to its rational
/// coefficient. Zero coefficients are never stored.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct PiRational {
    terms: BTreeMap<u32, BigRational>,
}

impl PiRational {
    pub fn from_rational(r: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !r.is_zero() {
            terms.insert(0, r);
        }
        Self { terms }
    }

    pub fn from_integer(n: i64) -> Self {
        Self::from_rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn pi() -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(1, BigRational::one());
        Self { terms }
    }

    /// Returns the rational value if no power of pi is present.
    pub fn as_rational(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&0).cloned(),
            _ => None,
        }
    }

    /// Returns `r` if `self == r * pi`.
    pub fn as_pi_multiple(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&1).cloned(),
            _ => None,
        }
    }

    pub fn scale(&self, r: &BigRational) -> Self {
        if r.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(k, v)| (*k, v * r)).collect(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.terms
            .iter()
            .map(|(k, v)| v.to_f64().unwrap_or(f64::NAN) * std::f64::consts::PI.powi(*k as i32))
            .sum()
    }

    fn insert_add(terms: &mut BTreeMap<u32, BigRational>, k: u32, v: BigRational) {
        let entry = terms.entry(k).or_insert_with(BigRational::zero);
        *entry += v;
        if entry.is_zero() {
            terms.remove(&k);
        }
    }

    fn single_term_string(power: u32, coef: &BigRational) -> String {
        let abs = coef.abs();
        let rat = if abs.is_integer() {
            abs.numer().to_string()
        } else {
            format!("{}/{}", abs.numer(), abs.denom())
        };
        match power {
            0 => rat,
            _ => {
                let pi = if power == 1 { "pi".to_string() } else { format!("pi^{power}") };
                if abs.is_one() {
                    pi
                } else {
                    format!("{rat}*{pi}")
                }
            }
        }
    }
}

impl fmt::Display for PiRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (k, v)) in self.terms.iter().enumerate() {
            let body = Self::single_term_string(*k, v);
            match (idx, v.is_negative()) {
                (0, true) => write!(f, "-{body}")?,
                (0, false) => write!(f, "{body}")?,
                (_, true) => write!(f, " - {body}")?,
                (_, false) => write!(f, " + {body}")?,
            }
        }
        Ok(())
    }
}

impl fmt::Debug for PiRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PiRational({self})")
    }
}

impl Add for PiRational {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (k, v) in rhs.terms {
            Self::insert_add(&mut self.terms, k, v);
        }
        self
    }
}

impl Sub for PiRational {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for PiRational {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            terms: self.terms.into_iter().map(|(k, v)| (k, -v)).collect(),
        }
    }
}

impl Mul for PiRational {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut terms = BTreeMap::new();
        for (ka, va) in &self.terms {
            for (kb, vb) in &rhs.terms {
                Self::insert_add(&mut terms, ka + kb, va * vb);
            }
        }
        Self { terms }
    }
}

impl Zero for PiRational {
    fn zero() -> Self {
        Self::default()
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

impl One for PiRational {
    fn one() -> Self {
        Self::from_integer(1)
    }
}

impl Coefficient for PiRational {
    fn half(&self) -> Self {
        self.scale(&BigRational::new(BigInt::one(), BigInt::from(2)))
    }
    fn to_complex(&self) -> Complex64 {
        Complex64::new(self.to_f64(), 0.0)
    }
    fn is_real(&self) -> bool {
        true
    }
}

/// Exact complex number `re + i im` with parts in `Q[pi]`.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct ExactComplex {
    pub re: PiRational,
    pub im: PiRational,
}

impl ExactComplex {
    pub fn real(re: PiRational) -> Self {
        Self {
            re,
            im: PiRational::zero(),
        }
    }

    pub fn i() -> Self {
        Self {
            re: PiRational::zero(),
            im: PiRational::one(),
        }
    }

    pub fn from_rational(r: BigRational) -> Self {
        Self::real(PiRational::from_rational(r))
    }

    pub fn from_integer(n: i64) -> Self {
        Self::real(PiRational::from_integer(n))
    }

    /// Rational value when the number is a real rational.
    pub fn as_rational(&self) -> Option<BigRational> {
        if self.im.is_zero() {
            self.re.as_rational()
        } else {
            None
        }
    }

    pub fn scale(&self, r: &BigRational) -> Self {
        Self {
            re: self.re.scale(r),
            im: self.im.scale(r),
        }
    }

    /// True when printing needs parentheses inside a product.
    pub fn is_compound(&self) -> bool {
        self.re.terms.len() + self.im.terms.len() > 1
    }
}

impl fmt::Display for ExactComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.re.is_zero(), self.im.is_zero()) {
            (_, true) => write!(f, "{}", self.re),
            (true, false) => write!(f, "({})*i", self.im),
            (false, false) => write!(f, "{} + ({})*i", self.re, self.im),
        }
    }
}

impl fmt::Debug for ExactComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExactComplex({self})")
    }
}

impl Add for ExactComplex {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }
}

impl Sub for ExactComplex {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            re: self.re - rhs.re,
            im: self.im - rhs.im,
        }
    }
}

impl Neg for ExactComplex {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            im: -self.im,
        }
    }
}

impl Mul for ExactComplex {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self {
            re: self.re.clone() * rhs.re.clone() - self.im.clone() * rhs.im.clone(),
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }
}

impl Zero for ExactComplex {
    fn zero() -> Self {
        Self::default()
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
}

impl One for ExactComplex {
    fn one() -> Self {
        Self::from_integer(1)
    }
}

impl Coefficient for ExactComplex {
    fn half(&self) -> Self {
        Self {
            re: self.re.half(),
            im: self.im.half(),
        }
    }
    fn to_complex(&self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }
    fn is_real(&self) -> bool {
        self.im.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn pi_arithmetic_is_exact() {
        let a = PiRational::pi().scale(&q(3, 2)) + PiRational::from_rational(q(1, 3));
        let b = a.clone() * a.clone() - a.clone() * a;
        assert!(b.is_zero());
    }

    #[test]
    fn display_orders_by_power() {
        let a = PiRational::from_rational(q(-1, 2)) + PiRational::pi() * PiRational::pi();
        assert_eq!(a.to_string(), "-1/2 + pi^2");
    }

    #[test]
    fn complex_product() {
        let i = ExactComplex::i();
        assert_eq!(i.clone() * i, -ExactComplex::one());
    }

    #[test]
    fn numeric_value_of_pi_polynomial() {
        let a = PiRational::pi().scale(&q(2, 1)) + PiRational::one();
        assert!((a.to_f64() - (1.0 + 2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }
}
