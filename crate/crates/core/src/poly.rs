//! Trigonometric polynomials in `t` with period one, and polynomials in the
//! state and parameter variables whose coefficients are trigonometric
//! polynomials.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use num_traits::Zero;

use crate::scalar::{Coefficient, ExactComplex};

/// `c0 + sum_m (a_m cos 2 pi m t + b_m sin 2 pi m t)`.
///
/// `cos[m - 1]` holds `a_m` and `sin[m - 1]` holds `b_m`. Trailing zeros are
/// trimmed so structural equality is equality of functions.
#[derive(Clone, PartialEq)]
pub struct TrigPoly<S> {
    constant: S,
    cos: Vec<S>,
    sin: Vec<S>,
}

impl<S: Coefficient> TrigPoly<S> {
    pub fn zero() -> Self {
        Self::constant(S::zero())
    }

    pub fn constant(c: S) -> Self {
        Self {
            constant: c,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn cos(m: usize) -> Self {
        let mut p = Self::zero();
        p.set_cos(m, S::one());
        p
    }

    pub fn sin(m: usize) -> Self {
        let mut p = Self::zero();
        p.set_sin(m, S::one());
        p
    }

    pub fn constant_term(&self) -> &S {
        &self.constant
    }

    pub fn cos_coefficient(&self, m: usize) -> S {
        if m == 0 {
            return self.constant.clone();
        }
        self.cos.get(m - 1).cloned().unwrap_or_else(S::zero)
    }

    pub fn sin_coefficient(&self, m: usize) -> S {
        if m == 0 {
            return S::zero();
        }
        self.sin.get(m - 1).cloned().unwrap_or_else(S::zero)
    }

    pub fn degree(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    pub fn is_zero(&self) -> bool {
        self.constant.is_zero() && self.cos.is_empty() && self.sin.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.cos.is_empty() && self.sin.is_empty()
    }

    pub fn set_cos(&mut self, m: usize, c: S) {
        if m == 0 {
            self.constant = c;
            return;
        }
        if self.cos.len() < m {
            self.cos.resize(m, S::zero());
        }
        self.cos[m - 1] = c;
        trim(&mut self.cos);
    }

    pub fn set_sin(&mut self, m: usize, c: S) {
        if m == 0 {
            return;
        }
        if self.sin.len() < m {
            self.sin.resize(m, S::zero());
        }
        self.sin[m - 1] = c;
        trim(&mut self.sin);
    }

    fn add_cos(&mut self, m: usize, c: S) {
        let cur = self.cos_coefficient(m);
        self.set_cos(m, cur + c);
    }

    fn add_sin(&mut self, m: usize, c: S) {
        let cur = self.sin_coefficient(m);
        self.set_sin(m, cur + c);
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.constant = out.constant.clone() + other.constant.clone();
        for m in 1..=other.degree() {
            out.add_cos(m, other.cos_coefficient(m));
            out.add_sin(m, other.sin_coefficient(m));
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.map(|c| -c.clone())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &S) -> Self {
        self.map(|c| c.clone() * s.clone())
    }

    /// Product via the angle addition formulas.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        let da = self.degree();
        let db = other.degree();
        for ma in 0..=da {
            let (ca, sa) = (self.cos_coefficient(ma), self.sin_coefficient(ma));
            if ca.is_zero() && sa.is_zero() {
                continue;
            }
            for mb in 0..=db {
                let (cb, sb) = (other.cos_coefficient(mb), other.sin_coefficient(mb));
                if cb.is_zero() && sb.is_zero() {
                    continue;
                }
                let sum = ma + mb;
                let (diff, flip) = if ma >= mb { (ma - mb, false) } else { (mb - ma, true) };
                // cos a cos b = (cos(a-b) + cos(a+b)) / 2
                let cc = (ca.clone() * cb.clone()).half();
                out.add_cos(diff, cc.clone());
                out.add_cos(sum, cc);
                // sin a sin b = (cos(a-b) - cos(a+b)) / 2
                let ss = (sa.clone() * sb.clone()).half();
                out.add_cos(diff, ss.clone());
                out.add_cos(sum, -ss);
                // sin a cos b = (sin(a+b) + sin(a-b)) / 2
                let sc = (sa.clone() * cb.clone()).half();
                out.add_sin(sum, sc.clone());
                out.add_sin(diff, if flip { -sc } else { sc });
                // cos a sin b = (sin(a+b) - sin(a-b)) / 2
                let cs = (ca.clone() * sb.clone()).half();
                out.add_sin(sum, cs.clone());
                out.add_sin(diff, if flip { cs } else { -cs });
            }
        }
        out
    }

    pub fn map<T: Coefficient>(&self, f: impl Fn(&S) -> T) -> TrigPoly<T> {
        let mut cos: Vec<T> = self.cos.iter().map(&f).collect();
        let mut sin: Vec<T> = self.sin.iter().map(&f).collect();
        trim(&mut cos);
        trim(&mut sin);
        TrigPoly {
            constant: f(&self.constant),
            cos,
            sin,
        }
    }

    pub fn to_numeric(&self) -> TrigPoly<Complex64> {
        self.map(|c| c.to_complex())
    }

    pub fn is_real(&self) -> bool {
        self.constant.is_real() && self.cos.iter().chain(&self.sin).all(Coefficient::is_real)
    }

    /// Value at `t`. The argument is reduced modulo one first.
    pub fn eval(&self, t: f64) -> Complex64 {
        let phase = t.rem_euclid(1.0);
        let mut acc = self.constant.to_complex();
        let d = self.degree();
        if d == 0 {
            return acc;
        }
        for m in 1..=d {
            let (sm, cm) = (2.0 * PI * m as f64 * phase).sin_cos();
            if let Some(a) = self.cos.get(m - 1) {
                acc += a.to_complex() * cm;
            }
            if let Some(b) = self.sin.get(m - 1) {
                acc += b.to_complex() * sm;
            }
        }
        acc
    }

    /// Sum of coefficient magnitudes, an upper bound for `sup |p|`.
    pub fn abs_bound(&self) -> f64 {
        self.constant.to_complex().norm() + self.cos.iter().chain(&self.sin).map(|c| c.to_complex().norm()).sum::<f64>()
    }
}

fn trim<S: Coefficient>(v: &mut Vec<S>) {
    while v.last().is_some_and(|c| c.is_zero()) {
        v.pop();
    }
}

fn harmonic_arg(m: usize) -> String {
    if m == 1 {
        "2*pi*t".to_string()
    } else {
        format!("{}*pi*t", 2 * m)
    }
}

fn coefficient_factor(c: &ExactComplex) -> Option<String> {
    if c.is_zero() {
        return None;
    }
    if c == &ExactComplex::from_integer(1) {
        return Some(String::new());
    }
    if c.is_compound() || !c.im.is_zero() {
        Some(format!("({c})*"))
    } else {
        Some(format!("{c}*"))
    }
}

impl fmt::Display for TrigPoly<ExactComplex> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.constant.is_zero() || self.degree() == 0 {
            parts.push(if self.constant.is_compound() || !self.constant.im.is_zero() {
                format!("({})", self.constant)
            } else {
                self.constant.to_string()
            });
        }
        for m in 1..=self.degree() {
            if let Some(factor) = coefficient_factor(&self.cos_coefficient(m)) {
                parts.push(format!("{factor}cos({})", harmonic_arg(m)));
            }
            if let Some(factor) = coefficient_factor(&self.sin_coefficient(m)) {
                parts.push(format!("{factor}sin({})", harmonic_arg(m)));
            }
        }
        write!(f, "{}", parts.join(" + "))
    }
}

impl<S: fmt::Debug> fmt::Debug for TrigPoly<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrigPoly")
            .field("constant", &self.constant)
            .field("cos", &self.cos)
            .field("sin", &self.sin)
            .finish()
    }
}

/// Exponents of the state variables `u1..un` and parameters `mu1..mud`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub u: Vec<u32>,
    pub mu: Vec<u32>,
}

impl Monomial {
    pub fn one(n: usize, d: usize) -> Self {
        Self {
            u: vec![0; n],
            mu: vec![0; d],
        }
    }

    pub fn u_degree(&self) -> u32 {
        self.u.iter().sum()
    }

    pub fn mu_degree(&self) -> u32 {
        self.mu.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.u_degree() == 0 && self.mu_degree() == 0
    }

    fn times(&self, other: &Self) -> Self {
        Self {
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            mu: self.mu.iter().zip(&other.mu).map(|(a, b)| a + b).collect(),
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (prefix, exps) in [("u", &self.u), ("mu", &self.mu)] {
            for (i, &e) in exps.iter().enumerate() {
                match e {
                    0 => {}
                    1 => parts.push(format!("{prefix}{}", i + 1)),
                    _ => parts.push(format!("{prefix}{}^{e}", i + 1)),
                }
            }
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// Polynomial in `u` and `mu` with periodic coefficients.
#[derive(Clone, PartialEq, Debug)]
pub struct MultiPoly<S> {
    n: usize,
    d: usize,
    terms: BTreeMap<Monomial, TrigPoly<S>>,
}

impl<S: Coefficient> MultiPoly<S> {
    pub fn zero(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_trig(n: usize, d: usize, p: TrigPoly<S>) -> Self {
        let mut out = Self::zero(n, d);
        out.insert(Monomial::one(n, d), p);
        out
    }

    pub fn constant(n: usize, d: usize, c: S) -> Self {
        Self::from_trig(n, d, TrigPoly::constant(c))
    }

    pub fn u_var(n: usize, d: usize, i: usize) -> Self {
        let mut m = Monomial::one(n, d);
        m.u[i] = 1;
        let mut out = Self::zero(n, d);
        out.insert(m, TrigPoly::constant(S::one()));
        out
    }

    pub fn mu_var(n: usize, d: usize, i: usize) -> Self {
        let mut m = Monomial::one(n, d);
        m.mu[i] = 1;
        let mut out = Self::zero(n, d);
        out.insert(m, TrigPoly::constant(S::one()));
        out
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &TrigPoly<S>)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn insert(&mut self, m: Monomial, p: TrigPoly<S>) {
        let entry = self.terms.entry(m.clone()).or_insert_with(TrigPoly::zero);
        *entry = entry.add(&p);
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    /// The trigonometric polynomial when no variable occurs.
    pub fn as_trig(&self) -> Option<TrigPoly<S>> {
        match self.terms.len() {
            0 => Some(TrigPoly::zero()),
            1 => self.terms.get(&Monomial::one(self.n, self.d)).cloned(),
            _ => None,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, p) in &other.terms {
            out.insert(m.clone(), p.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        Self {
            n: self.n,
            d: self.d,
            terms: self.terms.iter().map(|(m, p)| (m.clone(), p.neg())).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.n, self.d);
        for (ma, pa) in &self.terms {
            for (mb, pb) in &other.terms {
                out.insert(ma.times(mb), pa.mul(pb));
            }
        }
        out
    }

    pub fn scale(&self, s: &S) -> Self {
        let mut out = Self::zero(self.n, self.d);
        for (m, p) in &self.terms {
            out.insert(m.clone(), p.scale(s));
        }
        out
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::constant(self.n, self.d, S::one());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    pub fn map<T: Coefficient>(&self, f: impl Fn(&S) -> T + Copy) -> MultiPoly<T> {
        let mut out = MultiPoly::zero(self.n, self.d);
        for (m, p) in &self.terms {
            out.insert(m.clone(), p.map(f));
        }
        out
    }

    pub fn to_numeric(&self) -> MultiPoly<Complex64> {
        self.map(|c| c.to_complex())
    }

    pub fn is_real(&self) -> bool {
        self.terms.values().all(TrigPoly::is_real)
    }

    pub fn max_u_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::u_degree).max().unwrap_or(0)
    }

    pub fn mentions_u(&self) -> bool {
        self.terms.keys().any(|m| m.u_degree() > 0)
    }

    /// Substitutes parameter values, leaving a polynomial in `u` only.
    pub fn substitute_mu(&self, mu: &[S]) -> MultiPoly<S> {
        let mut out = MultiPoly::zero(self.n, 0);
        for (m, p) in &self.terms {
            let mut weight = S::one();
            for (&e, v) in m.mu.iter().zip(mu) {
                for _ in 0..e {
                    weight = weight * v.clone();
                }
            }
            let key = Monomial {
                u: m.u.clone(),
                mu: Vec::new(),
            };
            out.insert(key, p.scale(&weight));
        }
        out
    }
}

impl MultiPoly<Complex64> {
    /// Value at `(t, mu, u)`.
    pub fn eval(&self, t: f64, mu: &[f64], u: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, p) in &self.terms {
            let mut w = p.eval(t);
            for (&e, &x) in m.u.iter().zip(u) {
                if e > 0 {
                    w *= x.powu(e);
                }
            }
            for (&e, &x) in m.mu.iter().zip(mu) {
                if e > 0 {
                    w *= x.powi(e as i32);
                }
            }
            acc += w;
        }
        acc
    }
}

impl fmt::Display for MultiPoly<ExactComplex> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut parts = Vec::new();
        for (m, p) in &self.terms {
            let coef = p.to_string();
            let single = p.is_constant() && !p.constant_term().is_compound() && p.constant_term().im.is_zero();
            let part = match (m.is_one(), single) {
                (true, _) => coef,
                (false, true) if p.constant_term() == &ExactComplex::from_integer(1) => m.to_string(),
                (false, true) => format!("{coef}*{m}"),
                (false, false) => format!("({coef})*{m}"),
            };
            parts.push(part);
        }
        write!(f, "{}", parts.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_cosines() {
        let c1 = TrigPoly::<f64>::cos(1);
        let sq = c1.mul(&c1);
        assert_eq!(*sq.constant_term(), 0.5);
        assert_eq!(sq.cos_coefficient(2), 0.5);
        assert_eq!(sq.sin_coefficient(2), 0.0);
    }

    #[test]
    fn product_matches_pointwise_values() {
        let mut a = TrigPoly::<f64>::constant(0.3);
        a.set_cos(1, 1.2);
        a.set_sin(2, -0.7);
        let mut b = TrigPoly::<f64>::constant(-1.1);
        b.set_sin(1, 0.4);
        b.set_cos(3, 2.0);
        let ab = a.mul(&b);
        for k in 0..17 {
            let t = k as f64 / 17.0;
            let lhs = ab.eval(t);
            let rhs = a.eval(t) * b.eval(t);
            assert!((lhs - rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn eval_is_periodic() {
        let p = TrigPoly::<f64>::sin(3);
        assert_eq!(p.eval(0.25), p.eval(1.25));
    }

    #[test]
    fn monomial_display() {
        let mut m = Monomial::one(2, 1);
        m.u[0] = 2;
        m.mu[0] = 1;
        assert_eq!(m.to_string(), "u1^2*mu1");
    }
}
