//! Problem instances: dimension, inner products, the periodic coefficient
//! `A(t)`, the nonlinearity `f(t, mu, u)`, strip bounds and the time grid.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::expr::SymPoly;
use crate::poly::{Monomial, MultiPoly, TrigPoly};
use crate::scalar::ExactComplex;
use crate::{CMatrix, CVector};

/// The Y and X inner products as real symmetric positive definite Gram
/// matrices. `(a, b)_G = b^H G a`.
#[derive(Clone, Debug)]
pub struct InnerProductPair {
    pub gram_x: DMatrix<f64>,
    pub gram_y: DMatrix<f64>,
    gram_y_inv: DMatrix<f64>,
}

impl InnerProductPair {
    pub fn identity(n: usize) -> Self {
        Self {
            gram_x: DMatrix::identity(n, n),
            gram_y: DMatrix::identity(n, n),
            gram_y_inv: DMatrix::identity(n, n),
        }
    }

    pub fn new(gram_x: DMatrix<f64>, gram_y: DMatrix<f64>) -> Result<Self> {
        check_spd(&gram_x, "gram_x")?;
        check_spd(&gram_y, "gram_y")?;
        let gram_y_inv = gram_y.clone().cholesky().ok_or(Error::GramNotSpd { which: "gram_y" })?.inverse();
        Ok(Self {
            gram_x,
            gram_y,
            gram_y_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.gram_y.nrows()
    }

    pub fn gram_y_complex(&self) -> CMatrix {
        self.gram_y.map(|x| Complex64::new(x, 0.0))
    }

    pub fn gram_y_inv_complex(&self) -> CMatrix {
        self.gram_y_inv.map(|x| Complex64::new(x, 0.0))
    }

    pub fn inner_y(&self, a: &CVector, b: &CVector) -> Complex64 {
        weighted_inner(&self.gram_y, a, b)
    }

    pub fn inner_x(&self, a: &CVector, b: &CVector) -> Complex64 {
        weighted_inner(&self.gram_x, a, b)
    }

    pub fn norm_y(&self, a: &CVector) -> f64 {
        self.inner_y(a, a).re.max(0.0).sqrt()
    }

    pub fn norm_x(&self, a: &CVector) -> f64 {
        self.inner_x(a, a).re.max(0.0).sqrt()
    }

    /// `A* = G_Y^{-1} A^H G_Y`.
    pub fn adjoint(&self, a: &CMatrix) -> CMatrix {
        self.gram_y_inv_complex() * a.adjoint() * self.gram_y_complex()
    }
}

fn weighted_inner(g: &DMatrix<f64>, a: &CVector, b: &CVector) -> Complex64 {
    let n = g.nrows();
    let mut acc = Complex64::zero();
    for i in 0..n {
        let bi = b[i].conj();
        for j in 0..n {
            let gij = g[(i, j)];
            if gij != 0.0 {
                acc += bi * gij * a[j];
            }
        }
    }
    acc
}

fn check_spd(g: &DMatrix<f64>, which: &'static str) -> Result<()> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch(format!("{which} is not square")));
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    let asym = (g - g.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::GramNotSpd { which });
    }
    let eig = g.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::GramNotSpd { which });
    }
    Ok(())
}

/// `A(t)` as a matrix of trigonometric polynomials.
#[derive(Clone)]
pub struct PeriodicMatrixFunction {
    n: usize,
    entries: Vec<TrigPoly<Complex64>>,
    cache: Arc<Mutex<HashMap<usize, Arc<Vec<CMatrix>>>>>,
}

impl std::fmt::Debug for PeriodicMatrixFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicMatrixFunction")
            .field("n", &self.n)
            .field("entries", &self.entries)
            .finish()
    }
}

impl PeriodicMatrixFunction {
    /// Row-major entries.
    pub fn new(n: usize, entries: Vec<TrigPoly<Complex64>>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "operator has {} entries, expected {}",
                entries.len(),
                n * n
            )));
        }
        Ok(Self {
            n,
            entries,
            cache: Arc::default(),
        })
    }

    pub fn constant(a: &CMatrix) -> Self {
        let n = a.nrows();
        let entries = (0..n * n).map(|k| TrigPoly::constant(a[(k / n, k % n)])).collect();
        Self::new(n, entries).expect("square matrix")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &TrigPoly<Complex64> {
        &self.entries[i * self.n + j]
    }

    pub fn eval(&self, t: f64) -> CMatrix {
        let n = self.n;
        CMatrix::from_fn(n, n, |i, j| self.entries[i * n + j].eval(t))
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(TrigPoly::is_real)
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(TrigPoly::is_constant)
    }

    pub fn degree(&self) -> usize {
        self.entries.iter().map(TrigPoly::degree).max().unwrap_or(0)
    }

    /// Upper bound on `sup_t ||A(t)||` (Frobenius).
    pub fn norm_bound(&self) -> f64 {
        self.entries.iter().map(|e| e.abs_bound().powi(2)).sum::<f64>().sqrt()
    }

    /// `int_0^1 tr A(t) dt`.
    pub fn mean_trace(&self) -> Complex64 {
        (0..self.n).map(|i| *self.entries[i * self.n + i].constant_term()).sum()
    }

    /// Values at `k / count`, `k = 0..count`, computed once per `count`.
    pub fn samples(&self, count: usize) -> Arc<Vec<CMatrix>> {
        if let Some(hit) = self.cache.lock().get(&count) {
            return hit.clone();
        }
        let values: Arc<Vec<CMatrix>> = Arc::new((0..count).map(|k| self.eval(k as f64 / count as f64)).collect());
        self.cache.lock().insert(count, values.clone());
        values
    }
}

/// `f(t, mu, u)`: one polynomial per component.
#[derive(Clone, Debug)]
pub struct NonlinearTerm {
    n: usize,
    d: usize,
    symbolic: Vec<SymPoly>,
    numeric: Vec<MultiPoly<Complex64>>,
}

/// A nonlinearity with the parameters substituted, for repeated evaluation.
#[derive(Clone, Debug)]
pub struct FrozenNonlinearity {
    n: usize,
    terms: Vec<Vec<(Vec<u32>, TrigPoly<Complex64>)>>,
}

impl NonlinearTerm {
    pub fn new(n: usize, d: usize, symbolic: Vec<SymPoly>) -> Result<Self> {
        if symbolic.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "nonlinearity has {} components, expected {n}",
                symbolic.len()
            )));
        }
        let numeric = symbolic.iter().map(MultiPoly::to_numeric).collect();
        Ok(Self { n, d, symbolic, numeric })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[SymPoly] {
        &self.symbolic
    }

    /// Total polynomial degree in `u`.
    pub fn degree(&self) -> u32 {
        self.symbolic.iter().map(MultiPoly::max_u_degree).max().unwrap_or(0)
    }

    pub fn is_real(&self) -> bool {
        self.symbolic.iter().all(MultiPoly::is_real)
    }

    pub fn eval(&self, t: f64, mu: &[f64], u: &CVector) -> CVector {
        let us: Vec<Complex64> = u.iter().copied().collect();
        CVector::from_iterator(self.n, self.numeric.iter().map(|p| p.eval(t, mu, &us)))
    }

    /// True when no monomial is free of `u`, so `f(t, mu, 0) = 0` for all `mu`.
    pub fn vanishes_at_zero_for_all_mu(&self) -> bool {
        self.symbolic.iter().all(|p| p.terms().all(|(m, _)| m.u_degree() > 0))
    }

    /// Rejects constant or linear monomials in `u` at `mu = mu0`.
    pub fn check_tangency(&self, mu0: &[BigRational]) -> Result<()> {
        let mu: Vec<ExactComplex> = mu0.iter().cloned().map(ExactComplex::from_rational).collect();
        for (idx, p) in self.symbolic.iter().enumerate() {
            let at = p.substitute_mu(&mu);
            let offending = at.terms().find(|(m, _)| m.u_degree() <= 1).map(|(m, _)| Monomial {
                u: m.u.clone(),
                mu: Vec::new(),
            });
            if let Some(monomial) = offending {
                return Err(Error::TangencyViolation {
                    component: idx + 1,
                    monomial: monomial.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn freeze(&self, mu: &[f64]) -> FrozenNonlinearity {
        let mu_c: Vec<Complex64> = mu.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let terms = self
            .numeric
            .iter()
            .map(|p| p.substitute_mu(&mu_c).terms().map(|(m, tp)| (m.u.clone(), tp.clone())).collect())
            .collect();
        FrozenNonlinearity { n: self.n, terms }
    }
}

impl FrozenNonlinearity {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, t: f64, u: &CVector) -> CVector {
        CVector::from_iterator(
            self.n,
            self.terms.iter().map(|comp| {
                comp.iter()
                    .map(|(exps, tp)| {
                        let mut w = tp.eval(t);
                        for (&e, &x) in exps.iter().zip(u.iter()) {
                            if e > 0 {
                                w *= x.powu(e);
                            }
                        }
                        w
                    })
                    .sum()
            }),
        )
    }

    /// Values of all trigonometric coefficients at a fixed time, for loops
    /// that revisit the same phases.
    pub fn at_time(&self, t: f64) -> FrozenAtTime {
        FrozenAtTime {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|comp| comp.iter().map(|(e, tp)| (e.clone(), tp.eval(t))).collect())
                .collect(),
        }
    }
}

/// Nonlinearity with both the parameters and the time fixed.
#[derive(Clone, Debug)]
pub struct FrozenAtTime {
    n: usize,
    terms: Vec<Vec<(Vec<u32>, Complex64)>>,
}

impl FrozenAtTime {
    pub fn eval(&self, u: &CVector) -> CVector {
        CVector::from_iterator(
            self.n,
            self.terms.iter().map(|comp| {
                comp.iter()
                    .map(|(exps, c)| {
                        let mut w = *c;
                        for (&e, &x) in exps.iter().zip(u.iter()) {
                            if e > 0 {
                                w *= x.powu(e);
                            }
                        }
                        w
                    })
                    .sum()
            }),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StripSpec {
    pub beta1: f64,
    pub beta2: f64,
}

impl StripSpec {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 < beta2) {
            return Err(Error::Config(format!("strip requires beta1 < beta2, got ({beta1}, {beta2})")));
        }
        Ok(Self { beta1, beta2 })
    }

    pub fn contains(&self, re_lambda: f64) -> bool {
        self.beta1 < re_lambda && re_lambda < self.beta2
    }

    /// Distance of a real part to the nearer boundary.
    pub fn boundary_distance(&self, re_lambda: f64) -> f64 {
        (re_lambda - self.beta1).abs().min((re_lambda - self.beta2).abs())
    }

    /// True for strips around the imaginary axis.
    pub fn contains_imaginary_axis(&self) -> bool {
        self.beta1 < 0.0 && 0.0 < self.beta2
    }

    /// `min(-beta1, beta2)` for strips around the imaginary axis.
    pub fn half_width(&self) -> f64 {
        (-self.beta1).min(self.beta2)
    }
}

/// `N_t` equispaced points of `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    nt: usize,
}

impl TimeGrid {
    pub const DEFAULT_NT: usize = 256;

    pub fn new(nt: usize) -> Result<Self> {
        if nt < 8 || !nt.is_power_of_two() {
            return Err(Error::Config(format!("grid size {nt} must be a power of two >= 8")));
        }
        Ok(Self { nt })
    }

    pub fn len(&self) -> usize {
        self.nt
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / self.nt as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nt).map(|i| self.point(i))
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { nt: Self::DEFAULT_NT }
    }
}

/// Parameter box of radius `radius` (max norm) around `mu0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBox {
    pub mu0: Vec<f64>,
    pub radius: f64,
}

impl ParameterBox {
    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.mu0.len() && mu.iter().zip(&self.mu0).all(|(a, b)| (a - b).abs() <= self.radius * (1.0 + 1e-12))
    }
}

/// Exact source data, kept for serialization and for re-specialising the
/// operator at other parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSource {
    pub dimension: usize,
    pub params: usize,
    pub gram_x: Option<Vec<Vec<BigRational>>>,
    pub gram_y: Option<Vec<Vec<BigRational>>>,
    pub operator: Vec<SymPoly>,
    pub nonlinearity: Option<Vec<SymPoly>>,
    pub mu0: Vec<BigRational>,
    pub radius: BigRational,
    pub smoothness: u32,
    pub beta1: BigRational,
    pub beta2: BigRational,
    pub nt: usize,
    pub real: bool,
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub dimension: usize,
    pub inner: InnerProductPair,
    pub operator: PeriodicMatrixFunction,
    pub nonlinearity: Option<NonlinearTerm>,
    pub strip: StripSpec,
    pub grid: TimeGrid,
    pub real: bool,
    pub parameters: ParameterBox,
    /// Smoothness order `k` used by the cutoff.
    pub smoothness: u32,
    /// Parameter value the operator was specialised at.
    pub mu: Vec<f64>,
    source: ProblemSource,
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn gram_matrix(n: usize, rows: &Option<Vec<Vec<BigRational>>>) -> Result<DMatrix<f64>> {
    match rows {
        None => Ok(DMatrix::identity(n, n)),
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::DimensionMismatch(format!("Gram matrix must be {n}x{n}")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| to_f64(&rows[i][j])))
        }
    }
}

impl ProblemSpec {
    pub fn from_source(source: ProblemSource) -> Result<Self> {
        let n = source.dimension;
        if n == 0 {
            return Err(Error::DimensionMismatch("dimension must be positive".into()));
        }
        let inner = InnerProductPair::new(gram_matrix(n, &source.gram_x)?, gram_matrix(n, &source.gram_y)?)?;
        if source.operator.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "operator must be {n}x{n}, got {} entries",
                source.operator.len()
            )));
        }
        if source.operator.iter().any(MultiPoly::mentions_u) {
            return Err(Error::Config("operator entries may not depend on u".into()));
        }
        if source.mu0.len() != source.params {
            return Err(Error::DimensionMismatch(format!(
                "mu0 has {} entries, expected {}",
                source.mu0.len(),
                source.params
            )));
        }
        let nonlinearity = match &source.nonlinearity {
            Some(comps) => {
                let term = NonlinearTerm::new(n, source.params, comps.clone())?;
                term.check_tangency(&source.mu0)?;
                Some(term)
            }
            None => None,
        };
        let real_data = source.operator.iter().all(MultiPoly::is_real) && nonlinearity.as_ref().is_none_or(NonlinearTerm::is_real);
        if source.real && !real_data {
            return Err(Error::NotReal("complex coefficients in a problem flagged real".into()));
        }
        let strip = StripSpec::new(to_f64(&source.beta1), to_f64(&source.beta2))?;
        let grid = TimeGrid::new(source.nt)?;
        let mu0: Vec<f64> = source.mu0.iter().map(to_f64).collect();
        let parameters = ParameterBox {
            mu0: mu0.clone(),
            radius: to_f64(&source.radius),
        };
        let operator = specialise_operator(n, &source.operator, &mu0)?;
        Ok(Self {
            dimension: n,
            inner,
            operator,
            nonlinearity,
            strip,
            grid,
            real: source.real,
            parameters,
            smoothness: source.smoothness,
            mu: mu0,
            source,
        })
    }

    pub fn source(&self) -> &ProblemSource {
        &self.source
    }

    /// Operator specialised at another parameter value in the box.
    pub fn at_parameter(&self, mu: &[f64]) -> Result<Self> {
        if !self.parameters.contains(mu) {
            return Err(Error::ParameterOutOfRange(format!("{mu:?}")));
        }
        let mut out = self.clone();
        out.operator = specialise_operator(self.dimension, &self.source.operator, mu)?;
        out.mu = mu.to_vec();
        Ok(out)
    }

    /// True when some operator entry depends on the parameters.
    pub fn operator_depends_on_mu(&self) -> bool {
        self.source.operator.iter().any(|p| p.terms().any(|(m, _)| m.mu_degree() > 0))
    }

    pub fn with_grid(&self, nt: usize) -> Result<Self> {
        let mut out = self.clone();
        out.grid = TimeGrid::new(nt)?;
        out.source.nt = nt;
        Ok(out)
    }

    pub fn with_strip(&self, strip: StripSpec) -> Self {
        let mut out = self.clone();
        out.strip = strip;
        out
    }

    pub fn eval_operator(&self, t: f64) -> CMatrix {
        self.operator.eval(t)
    }

    pub fn adjoint_at(&self, t: f64) -> CMatrix {
        self.inner.adjoint(&self.operator.eval(t))
    }

    pub fn eval_nonlinearity(&self, t: f64, mu: &[f64], u: &CVector) -> Result<CVector> {
        let f = self.nonlinearity.as_ref().ok_or(Error::MissingNonlinearity)?;
        Ok(f.eval(t, mu, u))
    }
}

fn specialise_operator(n: usize, entries: &[SymPoly], mu: &[f64]) -> Result<PeriodicMatrixFunction> {
    let mu_c: Vec<Complex64> = mu.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let numeric = entries
        .iter()
        .map(|p| {
            p.to_numeric()
                .substitute_mu(&mu_c)
                .as_trig()
                .expect("operator entries are free of u")
        })
        .collect();
    PeriodicMatrixFunction::new(n, numeric)
}

/// `eval_operator` on a bare coefficient function.
pub fn eval_operator(a: &PeriodicMatrixFunction, t: f64) -> CMatrix {
    a.eval(t)
}

/// `A*(t) = G_Y^{-1} A(t)^H G_Y`.
pub fn adjoint_at(a: &PeriodicMatrixFunction, ip: &InnerProductPair, t: f64) -> CMatrix {
    ip.adjoint(&a.eval(t))
}

/// `f(t, mu, u)`.
pub fn eval_nonlinearity(f: &NonlinearTerm, t: f64, mu: &[f64], u: &CVector) -> CVector {
    f.eval(t, mu, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adjoint_with_weighted_gram() {
        let ip = InnerProductPair::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).unwrap();
        let a = CMatrix::from_row_slice(2, 2, &[0.0.into(), 1.0.into(), 0.0.into(), 0.0.into()]);
        let adj = ip.adjoint(&a);
        let expected = CMatrix::from_row_slice(2, 2, &[0.0.into(), 0.0.into(), 2.0.into(), 0.0.into()]);
        assert_abs_diff_eq!((adj - expected).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_indefinite_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            InnerProductPair::new(DMatrix::identity(2, 2), g),
            Err(Error::GramNotSpd { which: "gram_y" })
        ));
    }

    #[test]
    fn grid_must_be_power_of_two() {
        assert!(TimeGrid::new(100).is_err());
        assert_eq!(TimeGrid::new(64).unwrap().spacing(), 1.0 / 64.0);
    }

    #[test]
    fn strip_ordering() {
        assert!(StripSpec::new(1.0, -1.0).is_err());
        let s = StripSpec::new(-0.5, 1.0).unwrap();
        assert!(s.contains(0.0));
        assert_eq!(s.half_width(), 0.5);
    }
}
