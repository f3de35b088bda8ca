//! Eigenvalues of the pencil `D_t + A(t) + lambda` on periodic functions,
//! canonical Jordan chains, adjoint chains and their biorthogonal
//! normalization, plus a collocation oracle.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::fourier::{self, TrigInterpolant};
use crate::linalg;
use crate::problem::{InnerProductPair, PeriodicMatrixFunction, ProblemSpec, StripSpec};
use crate::propagator::{phase_time, FundamentalSolution, PHASE_SLOTS};
use crate::{CMatrix, CVector, C64};

const TWO_PI: f64 = 2.0 * PI;

/// Largest tolerated condition number of a multiplier cluster's spectral
/// projector.
const MAX_CLUSTER_CONDITION: f64 = 1e8;
const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct PencilEigenvalue {
    /// Floquet exponent with `Im lambda` in `[0, 2 pi)`.
    pub lambda: C64,
    pub multiplier: C64,
    pub geometric: usize,
    /// Partial multiplicities in descending order.
    pub partial: Vec<usize>,
    pub algebraic: usize,
    /// Norm of the spectral projector of the multiplier cluster.
    pub condition: f64,
    members: Vec<C64>,
    spectrum: Vec<C64>,
}

impl PencilEigenvalue {
    /// Whether `z` is an eigenvalue of `M` closest to this cluster.
    fn selects(&self, z: C64) -> bool {
        let nearest = self
            .spectrum
            .iter()
            .min_by(|a, b| (**a - z).norm().total_cmp(&(**b - z).norm()))
            .copied()
            .unwrap_or(z);
        self.members.iter().any(|m| (*m - nearest).norm() == 0.0)
    }

    fn selects_adjoint(&self, z: C64) -> bool {
        if z.norm() == 0.0 {
            return false;
        }
        self.selects(C64::new(1.0, 0.0) / z.conj())
    }
}

/// `log mu` with the imaginary part in `[0, 2 pi)`. Multipliers within
/// rounding of the positive real axis map to a real exponent.
pub fn exponent(mu: C64) -> C64 {
    let r = mu.norm();
    let mut arg = mu.im.atan2(mu.re);
    if mu.im.abs() <= 1e-13 * r {
        arg = if mu.re > 0.0 { 0.0 } else { PI };
    }
    if arg < 0.0 {
        arg += TWO_PI;
    }
    if arg >= TWO_PI {
        arg -= TWO_PI;
    }
    C64::new(r.ln(), arg)
}

fn order_key(l: &C64) -> (i64, i64) {
    ((l.re * 1e9).round() as i64, (l.im * 1e9).round() as i64)
}

/// Principal logarithm of `t / mu`, summed as a series in `t / mu - I`,
/// which is nilpotent up to the cluster spread.
fn log_unipotent<T: ComplexField<RealField = f64>>(t: &DMatrix<T>, mu: T) -> DMatrix<T> {
    let k = t.nrows();
    let w = t.map(|x| x / mu.clone()) - DMatrix::<T>::identity(k, k);
    let mut out = DMatrix::<T>::zeros(k, k);
    let mut pw = w.clone();
    for j in 1..=(k + 3) {
        let c = if j % 2 == 1 { 1.0 } else { -1.0 } / j as f64;
        out += pw.map(|x| x * T::from_real(c));
        pw = &pw * &w;
    }
    out
}

/// `rank N^p` for `p = 0, 1, ...` until the rank reaches zero.
fn rank_profile<T: ComplexField<RealField = f64>>(n: &DMatrix<T>, tol: f64) -> Vec<usize> {
    let k = n.nrows();
    let mut ranks = vec![k];
    let mut pw = DMatrix::<T>::identity(k, k);
    while *ranks.last().unwrap() > 0 && ranks.len() <= k + 1 {
        pw = &pw * n;
        ranks.push(linalg::rank(&pw, tol));
    }
    ranks
}

fn partial_from_ranks(ranks: &[usize]) -> Vec<usize> {
    let r = |p: usize| ranks.get(p).copied().unwrap_or(0);
    let mut out = Vec::new();
    for p in (1..ranks.len()).rev() {
        let count = (r(p - 1) - r(p)).saturating_sub(r(p) - r(p + 1));
        out.extend(std::iter::repeat(p).take(count));
    }
    out
}

fn hcat<T: ComplexField<RealField = f64>>(rows: usize, parts: &[DMatrix<T>]) -> DMatrix<T> {
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::<T>::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(p);
        c += p.ncols();
    }
    out
}

/// Canonical chains of the nilpotent `n`: `n y_0 = 0`, `n y_m = y_{m-1}`,
/// longest chains first. Top vectors are picked orthogonal to everything
/// already spanned.
fn canonical_chains<T: ComplexField<RealField = f64>>(n: &DMatrix<T>, tol: f64) -> Result<Vec<Vec<DVector<T>>>> {
    let k = n.nrows();
    let ranks = rank_profile(n, tol);
    let partial = partial_from_ranks(&ranks);
    if partial.iter().sum::<usize>() != k {
        return Err(Error::ChainConstruction(format!(
            "rank profile {ranks:?} does not describe a nilpotent operator of size {k}"
        )));
    }
    let mut powers = vec![DMatrix::<T>::identity(k, k)];
    for p in 1..ranks.len() {
        powers.push(&powers[p - 1] * n);
    }
    let mut chains: Vec<Vec<DVector<T>>> = Vec::new();
    let longest = partial.first().copied().unwrap_or(0);
    for p in (1..=longest).rev() {
        let count = partial.iter().filter(|&&q| q == p).count();
        if count == 0 {
            continue;
        }
        let mut avoid = vec![linalg::null_space(&powers[p - 1], tol)];
        let mut lower = DMatrix::<T>::zeros(k, chains.len());
        for (c, chain) in chains.iter().enumerate() {
            lower.set_column(c, &chain[p - 1]);
        }
        avoid.push(lower);
        let s = linalg::column_space(&hcat(k, &avoid), 1e-10);
        let candidates = if p == ranks.len() - 1 {
            DMatrix::<T>::identity(k, k)
        } else {
            linalg::null_space(&powers[p], tol)
        };
        let projected = &candidates - &s * (s.adjoint() * &candidates);
        let svd = projected.svd(true, false);
        let u = svd.u.expect("requested u");
        let mut order: Vec<(f64, usize)> = svd.singular_values.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if order.len() < count || order[count - 1].0 < 1e-6 {
            return Err(Error::ChainConstruction(format!(
                "could not find {count} independent chain tops of length {p}"
            )));
        }
        for &(_, i) in order.iter().take(count) {
            let top: DVector<T> = u.column(i).into_owned();
            let mut chain = vec![top];
            for _ in 1..p {
                let next = n * chain.last().unwrap();
                chain.push(next);
            }
            chain.reverse();
            chains.push(chain);
        }
    }
    Ok(chains)
}

/// Canonical chains of `M` at a multiplier cluster: the logarithm of
/// `M / mu` on the invariant subspace is nilpotent with the same chains.
/// `adjoint` selects `N_a = -log(conj(mu) M_a)` on the adjoint side.
fn multiplier_chains(
    m: &CMatrix,
    select: impl Fn(C64) -> bool,
    expected: usize,
    adjoint: bool,
    rank_tol: f64,
) -> Result<Vec<Vec<CVector>>> {
    let (z, t11) = linalg::invariant_subspace(m, &select);
    if z.ncols() != expected {
        return Err(Error::ChainConstruction(format!(
            "invariant subspace has dimension {}, expected {expected}",
            z.ncols()
        )));
    }
    let k = expected;
    let mu = t11.trace() / k as f64;
    let real = linalg::imaginary_fraction(m) == 0.0 && mu.im.abs() <= 1e-12 * mu.norm();
    let sign = if adjoint { -1.0 } else { 1.0 };
    if real {
        let stacked = hcat(m.nrows(), &[z.map(|c| c.re), z.map(|c| c.im)]);
        let zr = linalg::column_space(&stacked, 1e-8);
        if zr.ncols() != k {
            return Err(Error::ChainConstruction("real invariant subspace has wrong dimension".into()));
        }
        let tr = zr.transpose() * linalg::real_part(m) * &zr;
        let n = log_unipotent(&tr, mu.re) * sign;
        let chains = canonical_chains(&n, rank_tol)?;
        Ok(chains
            .into_iter()
            .map(|c| c.into_iter().map(|y| linalg::to_complex_vector(&(&zr * y))).collect())
            .collect())
    } else {
        let n = log_unipotent(&t11, mu) * C64::new(sign, 0.0);
        let chains = canonical_chains(&n, rank_tol)?;
        Ok(chains.into_iter().map(|c| c.into_iter().map(|y| &z * y).collect()).collect())
    }
}

/// Multipliers of `M` inside the strip, clustered and mapped to exponents.
pub fn strip_eigenvalues(f: &FundamentalSolution, strip: &StripSpec, tol: &Tolerances) -> Result<Vec<PencilEigenvalue>> {
    let m = &f.monodromy;
    let schur = linalg::ordered_schur(m, |_| false);
    let spectrum: Vec<C64> = (0..m.nrows()).map(|i| schur.t[(i, i)]).collect();
    for mu in &spectrum {
        let re = mu.norm().ln();
        let distance = strip.boundary_distance(re);
        if distance < tol.margin {
            return Err(Error::StripBoundary {
                lambda: format!("{}", exponent(*mu)),
                distance,
            });
        }
    }
    let inside: Vec<C64> = spectrum.iter().copied().filter(|mu| strip.contains(mu.norm().ln())).collect();
    let mut groups: Vec<Vec<C64>> = Vec::new();
    for mu in inside {
        let close = |g: &Vec<C64>| g.iter().any(|x| (*x - mu).norm() <= tol.cluster * x.norm().max(1.0));
        match groups.iter_mut().find(|g| close(g)) {
            Some(g) => g.push(mu),
            None => groups.push(vec![mu]),
        }
    }
    let m_norm = m.norm();
    let mut out = Vec::with_capacity(groups.len());
    for members in groups {
        let k = members.len();
        let mean = members.iter().sum::<C64>() / k as f64;
        let mut eig = PencilEigenvalue {
            lambda: exponent(mean),
            multiplier: mean,
            geometric: 0,
            partial: Vec::new(),
            algebraic: k,
            condition: 1.0,
            members,
            spectrum: spectrum.clone(),
        };
        let projector = linalg::spectral_projector(m, |z| eig.selects(z));
        eig.condition = linalg::singular_values(&projector).first().copied().unwrap_or(1.0);
        if eig.condition > MAX_CLUSTER_CONDITION {
            return Err(Error::IllConditionedCluster {
                lambda: format!("{}", eig.lambda),
                condition: eig.condition,
            });
        }
        let (_, t11) = linalg::invariant_subspace(m, |z| eig.selects(z));
        let n = log_unipotent(&t11, mean);
        let ranks = rank_profile(&n, tol.rank * (m_norm / mean.norm()).max(1.0));
        eig.partial = partial_from_ranks(&ranks);
        eig.geometric = eig.partial.len();
        out.push(eig);
    }
    out.sort_by_key(|e| order_key(&e.lambda));
    Ok(out)
}

/// Vector-valued periodic functions indexed by chain `j` and position `m`,
/// sampled at every phase slot.
#[derive(Clone, Debug)]
pub struct ChainFunctions {
    pub lengths: Vec<usize>,
    /// Values at `t = 0` of the underlying solutions of the evolution.
    pub initial: Vec<Vec<CVector>>,
    /// `samples[j][m][p]` at phase slot `p`.
    pub samples: Vec<Vec<Vec<CVector>>>,
    nt: usize,
    interpolants: OnceLock<Vec<Vec<TrigInterpolant>>>,
}

impl ChainFunctions {
    pub fn count(&self) -> usize {
        self.lengths.len()
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// `(j, m)` pairs in lexicographic order.
    pub fn indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.total());
        for (j, &len) in self.lengths.iter().enumerate() {
            for m in 0..len {
                out.push((j, m));
            }
        }
        out
    }

    pub fn at_phase(&self, j: usize, m: usize, p: usize) -> &CVector {
        &self.samples[j][m][p]
    }

    pub fn at_grid(&self, j: usize, m: usize, i: usize) -> &CVector {
        &self.samples[j][m][PHASE_SLOTS * i]
    }

    pub fn grid_samples(&self, j: usize, m: usize) -> Vec<CVector> {
        (0..self.nt).map(|i| self.at_grid(j, m, i).clone()).collect()
    }

    /// Trigonometric interpolation of the grid samples.
    pub fn eval(&self, j: usize, m: usize, t: f64) -> CVector {
        let table = self.interpolants.get_or_init(|| {
            self.lengths
                .iter()
                .enumerate()
                .map(|(j, &len)| (0..len).map(|m| TrigInterpolant::new(&self.grid_samples(j, m))).collect())
                .collect()
        });
        table[j][m].eval(t)
    }

    fn from_parts(lengths: Vec<usize>, initial: Vec<Vec<CVector>>, samples: Vec<Vec<Vec<CVector>>>, nt: usize) -> Self {
        Self {
            lengths,
            initial,
            samples,
            nt,
            interpolants: OnceLock::new(),
        }
    }

    /// Multiplies every sample by `g(t_p)`, used for the `2 pi i` shift.
    pub fn modulated(&self, g: impl Fn(f64) -> C64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .map(|s| s.iter().enumerate().map(|(p, v)| v * g(phase_time(self.nt, p))).collect())
                    .collect()
            })
            .collect();
        Self::from_parts(self.lengths.clone(), self.initial.clone(), samples, self.nt)
    }
}

#[derive(Clone, Debug)]
pub struct JordanChainSet {
    pub eig: PencilEigenvalue,
    pub functions: ChainFunctions,
    /// Relative pencil residual on the grid.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct AdjointChainSet {
    pub eig: PencilEigenvalue,
    pub functions: ChainFunctions,
    pub residual: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Pencil residual `max ||(s D_t + A(t) + lambda) f_m + f_{m-1}||` relative to
/// the size of the chain, with `s = 1` for chains and `s = -1` for adjoint
/// chains (where `A` is the adjoint coefficient).
fn pencil_residual(funcs: &ChainFunctions, coefficient: &dyn Fn(f64) -> CMatrix, lambda: C64, sign: f64, a_bound: f64) -> f64 {
    let nt = funcs.nt;
    let coeffs: Vec<CMatrix> = (0..nt).map(|i| coefficient(i as f64 / nt as f64)).collect();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (j, &len) in funcs.lengths.iter().enumerate() {
        for m in 0..len {
            let s = funcs.grid_samples(j, m);
            scale = s.iter().map(|v| v.norm()).fold(scale, f64::max);
            let d = fourier::differentiate(&s);
            for i in 0..nt {
                let mut r = &d[i] * C64::new(sign, 0.0) + &coeffs[i] * &s[i] + &s[i] * lambda;
                if m > 0 {
                    r += funcs.at_grid(j, m - 1, i);
                }
                worst = worst.max(r.norm());
            }
        }
    }
    worst / (scale.max(f64::MIN_POSITIVE) * (1.0 + a_bound + lambda.norm()))
}

/// Ortho-normalizes chains of equal length so that their eigenvectors are
/// orthonormal in the quadrature inner product; applies a deterministic
/// phase to each chain. `weight` is the Gram matrix of the eigenvector
/// functions in terms of initial vectors.
fn orthonormalize(chains: &mut [Vec<CVector>], weight: &CMatrix) -> Result<()> {
    let mut start = 0;
    while start < chains.len() {
        let len = chains[start].len();
        let end = start + chains[start..].iter().take_while(|c| c.len() == len).count();
        let h = end - start;
        let gram = CMatrix::from_fn(h, h, |b, a| {
            let va = &chains[start + a][0];
            let vb = &chains[start + b][0];
            (vb.adjoint() * weight * va)[(0, 0)]
        });
        let chol = gram.clone().cholesky().ok_or(Error::SingularGram { condition: f64::INFINITY })?;
        let c = chol
            .l()
            .adjoint()
            .try_inverse()
            .ok_or(Error::SingularGram { condition: f64::INFINITY })?;
        let old: Vec<Vec<CVector>> = chains[start..end].to_vec();
        for col in 0..h {
            for m in 0..len {
                let mut v = CVector::zeros(old[0][m].len());
                for (a, chain) in old.iter().enumerate() {
                    v += &chain[m] * c[(a, col)];
                }
                chains[start + col][m] = v;
            }
        }
        start = end;
    }
    for chain in chains.iter_mut() {
        let v0 = &chain[0];
        let max = v0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if let Some(pivot) = v0.iter().find(|z| z.norm() >= 0.999 * max) {
            if pivot.im != 0.0 {
                let phase = pivot.conj() / pivot.norm();
                for v in chain.iter_mut() {
                    *v *= phase;
                }
            }
        }
    }
    Ok(())
}

/// Samples `f_m(t) = e^{s t} E(t) v_m - sum_{nu >= 1} (c t)^nu / nu! f_{m - nu}(t)`
/// at every phase, where `E` is the evolution at phase `p`.
fn sample_chains(chains: &[Vec<CVector>], evolution: &dyn Fn(usize) -> CMatrix, rate: C64, c: f64, nt: usize) -> Vec<Vec<Vec<CVector>>> {
    let phases = PHASE_SLOTS * nt;
    let mut out: Vec<Vec<Vec<CVector>>> = chains.iter().map(|ch| vec![Vec::with_capacity(phases); ch.len()]).collect();
    for p in 0..phases {
        let t = phase_time(nt, p);
        let e = evolution(p);
        let factor = (rate * t).exp();
        for (j, chain) in chains.iter().enumerate() {
            for m in 0..chain.len() {
                let mut v = &e * &chain[m] * factor;
                for nu in 1..=m {
                    let w = (c * t).powi(nu as i32) / factorial(nu);
                    v -= &out[j][m - nu][p] * C64::new(w, 0.0);
                }
                out[j][m].push(v);
            }
        }
    }
    out
}

/// Quadrature Gram weight `mean_i e^{-2 Re(lambda) t_i} U_i^H G U_i`.
fn eigenvector_weight(f: &FundamentalSolution, lambda: C64) -> CMatrix {
    let nt = f.nt();
    let g = f.inner.gram_y_complex();
    let n = f.dim();
    let mut w = CMatrix::zeros(n, n);
    for i in 0..nt {
        let t = i as f64 / nt as f64;
        let u = &f.samples[i];
        w += u.adjoint() * &g * u * C64::new((-2.0 * lambda.re * t).exp(), 0.0);
    }
    w / C64::new(nt as f64, 0.0)
}

fn rank_tolerance(f: &FundamentalSolution, eig: &PencilEigenvalue, tol: &Tolerances) -> f64 {
    tol.rank * (f.monodromy.norm() / eig.multiplier.norm()).max(1.0)
}

/// Canonical Jordan chains of the pencil at `eig`.
pub fn jordan_chains(f: &FundamentalSolution, eig: &PencilEigenvalue, tol: &Tolerances) -> Result<JordanChainSet> {
    let mut chains = multiplier_chains(&f.monodromy, |z| eig.selects(z), eig.algebraic, false, rank_tolerance(f, eig, tol))?;
    let lengths: Vec<usize> = chains.iter().map(|c| c.len()).collect();
    if lengths != eig.partial {
        return Err(Error::ChainConstruction(format!(
            "chain lengths {lengths:?} differ from partial multiplicities {:?}",
            eig.partial
        )));
    }
    orthonormalize(&mut chains, &eigenvector_weight(f, eig.lambda))?;
    let samples = sample_chains(&chains, &|p| f.u_at_phase(p), -eig.lambda, 1.0, f.nt());
    let functions = ChainFunctions::from_parts(lengths, chains, samples, f.nt());
    let op = f.operator.clone();
    let residual = pencil_residual(&functions, &|t| op.eval(t), eig.lambda, 1.0, op.norm_bound());
    if residual > tol.chain {
        return Err(Error::ChainResidual {
            residual,
            tolerance: tol.chain,
        });
    }
    Ok(JordanChainSet {
        eig: eig.clone(),
        functions,
        residual,
    })
}

fn adjoint_residual(f: &FundamentalSolution, funcs: &ChainFunctions, lambda: C64) -> f64 {
    let op = f.operator.clone();
    let inner = f.inner.clone();
    pencil_residual(funcs, &|t| inner.adjoint(&op.eval(t)), lambda.conj(), -1.0, op.norm_bound())
}

/// Adjoint chains at `eig`, before normalization.
pub fn adjoint_chains(f: &FundamentalSolution, eig: &PencilEigenvalue, tol: &Tolerances) -> Result<AdjointChainSet> {
    let ma = f.adjoint_monodromy();
    let chains = multiplier_chains(&ma, |z| eig.selects_adjoint(z), eig.algebraic, true, rank_tolerance(f, eig, tol))
        .map_err(|e| Error::AdjointMismatch(e.to_string()))?;
    let lengths: Vec<usize> = chains.iter().map(|c| c.len()).collect();
    if lengths != eig.partial {
        return Err(Error::AdjointMismatch(format!(
            "adjoint chain lengths {lengths:?} differ from {:?}",
            eig.partial
        )));
    }
    let g = f.inner.gram_y_complex();
    let g_inv = f.inner.gram_y_inv_complex();
    let evolution = |p: usize| &g_inv * f.u_inv_at_phase(p).adjoint() * &g;
    let samples = sample_chains(&chains, &evolution, eig.lambda.conj(), -1.0, f.nt());
    let functions = ChainFunctions::from_parts(lengths, chains, samples, f.nt());
    let residual = adjoint_residual(f, &functions, eig.lambda);
    if residual > tol.chain {
        return Err(Error::ChainResidual {
            residual,
            tolerance: tol.chain,
        });
    }
    Ok(AdjointChainSet {
        eig: eig.clone(),
        functions,
        residual,
    })
}

/// Quadrature inner product `mean_i (a(t_i), b(t_i))_Y` of two sampled
/// functions.
pub fn inner_hat(inner: &InnerProductPair, a: &ChainFunctions, ja: usize, ma: usize, b: &ChainFunctions, jb: usize, mb: usize) -> C64 {
    let nt = a.nt;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..nt {
        acc += inner.inner_y(a.at_grid(ja, ma, i), b.at_grid(jb, mb, i));
    }
    acc / nt as f64
}

#[derive(Clone, Debug)]
pub struct EigenBlock {
    pub eig: PencilEigenvalue,
    pub chains: ChainFunctions,
    pub adjoint: ChainFunctions,
    pub chain_residual: f64,
    pub adjoint_residual: f64,
    /// Condition number of the Gram block used for the normalization.
    pub gram_condition: f64,
}

impl EigenBlock {
    pub fn lambda(&self) -> C64 {
        self.eig.lambda
    }

    /// Position paired with `(j, m)`: `(j, m_j - 1 - m)`.
    pub fn partner(&self, j: usize, m: usize) -> usize {
        self.chains.lengths[j] - 1 - m
    }
}

/// Replaces the adjoint chains by the dual system
/// `(phi_{j,m}, psi_{J, m_J - 1 - M})_hat = delta`.
pub fn normalize(f: &FundamentalSolution, chains: JordanChainSet, adjoint: AdjointChainSet, tol: &Tolerances) -> Result<EigenBlock> {
    let phi = &chains.functions;
    let psi = &adjoint.functions;
    if phi.lengths != psi.lengths {
        return Err(Error::AdjointMismatch(format!(
            "chain lengths {:?} and adjoint lengths {:?} differ",
            phi.lengths, psi.lengths
        )));
    }
    let idx = phi.indices();
    let k = idx.len();
    let gamma = CMatrix::from_fn(k, k, |a, c| {
        let (ja, ma) = idx[a];
        let (jc, mc) = idx[c];
        inner_hat(&f.inner, phi, ja, ma, psi, jc, mc)
    });
    let gram_condition = linalg::condition_number(&gamma);
    if !gram_condition.is_finite() || gram_condition > MAX_GRAM_CONDITION {
        return Err(Error::SingularGram { condition: gram_condition });
    }
    let position = |j: usize, m: usize| idx.iter().position(|&x| x == (j, m)).unwrap();
    let mut pi = CMatrix::zeros(k, k);
    for (a, &(j, m)) in idx.iter().enumerate() {
        pi[(a, position(j, phi.lengths[j] - 1 - m))] = C64::new(1.0, 0.0);
    }
    let x = (linalg::inverse(&gamma)? * pi).map(|z| z.conj());
    let combine = |values: &dyn Fn(usize, usize) -> CVector, b: usize| -> CVector {
        let mut v = CVector::zeros(f.dim());
        for (c, &(jc, mc)) in idx.iter().enumerate() {
            if x[(c, b)] != C64::new(0.0, 0.0) {
                v += values(jc, mc) * x[(c, b)];
            }
        }
        v
    };
    let phases = f.phase_count();
    let mut samples: Vec<Vec<Vec<CVector>>> = psi.lengths.iter().map(|&l| vec![Vec::with_capacity(phases); l]).collect();
    let mut initial: Vec<Vec<CVector>> = psi.lengths.iter().map(|&l| Vec::with_capacity(l)).collect();
    for (b, &(j, m)) in idx.iter().enumerate() {
        initial[j].push(combine(&|jc, mc| psi.initial[jc][mc].clone(), b));
        for p in 0..phases {
            let v = combine(&|jc, mc| psi.at_phase(jc, mc, p).clone(), b);
            samples[j][m].push(v);
        }
    }
    let normalized = ChainFunctions::from_parts(psi.lengths.clone(), initial, samples, f.nt());
    let adjoint_residual = adjoint_residual(f, &normalized, chains.eig.lambda);
    if adjoint_residual > tol.chain {
        return Err(Error::ChainResidual {
            residual: adjoint_residual,
            tolerance: tol.chain,
        });
    }
    let block = EigenBlock {
        eig: chains.eig,
        chains: chains.functions,
        adjoint: normalized,
        chain_residual: chains.residual,
        adjoint_residual,
        gram_condition,
    };
    let defect = block_biorthogonality(&f.inner, &block, &block);
    if defect > tol.biorth {
        return Err(Error::BiorthogonalityDefect {
            defect,
            tolerance: tol.biorth,
        });
    }
    Ok(block)
}

/// `max |(phi^k_{j,m}, psi^K_{J, m_J - 1 - M})_hat - delta|` over one pair of
/// blocks.
fn block_biorthogonality(inner: &InnerProductPair, a: &EigenBlock, b: &EigenBlock) -> f64 {
    let same = std::ptr::eq(a, b);
    let mut worst: f64 = 0.0;
    for (j, m) in a.chains.indices() {
        for (jj, mm) in b.chains.indices() {
            let v = inner_hat(inner, &a.chains, j, m, &b.adjoint, jj, b.partner(jj, mm));
            let target = if same && j == jj && m == mm { 1.0 } else { 0.0 };
            worst = worst.max((v - target).norm());
        }
    }
    worst
}

/// All strip eigenvalues with normalized chain systems.
#[derive(Clone, Debug)]
pub struct NormalizedChainSystem {
    pub blocks: Vec<EigenBlock>,
    pub nt: usize,
    pub inner: InnerProductPair,
    pub operator: PeriodicMatrixFunction,
    pub strip: StripSpec,
}

impl NormalizedChainSystem {
    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn total_multiplicity(&self) -> usize {
        self.blocks.iter().map(|b| b.chains.total()).sum()
    }

    /// Index set `(k, j, m)` in lexicographic order.
    pub fn theta(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            for (j, m) in b.chains.indices() {
                out.push((k, j, m));
            }
        }
        out
    }

    /// Maximum quadrature biorthogonality defect over all index pairs,
    /// including pairs from different eigenvalues.
    pub fn biorthogonality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.blocks {
            for b in &self.blocks {
                worst = worst.max(block_biorthogonality(&self.inner, a, b));
            }
        }
        worst
    }

    pub fn max_chain_residual(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.chain_residual.max(b.adjoint_residual))
            .fold(0.0, f64::max)
    }
}

/// Builds and normalizes chains for every eigenvalue in the strip.
pub fn chain_system(f: &FundamentalSolution, strip: &StripSpec, tol: &Tolerances) -> Result<NormalizedChainSystem> {
    let eigs = strip_eigenvalues(f, strip, tol)?;
    f.kernels();
    let blocks: Result<Vec<EigenBlock>> = eigs
        .par_iter()
        .map(|eig| {
            let chains = jordan_chains(f, eig, tol)?;
            let adjoint = adjoint_chains(f, eig, tol)?;
            normalize(f, chains, adjoint, tol)
        })
        .collect();
    Ok(NormalizedChainSystem {
        blocks: blocks?,
        nt: f.nt(),
        inner: f.inner.clone(),
        operator: f.operator.clone(),
        strip: *strip,
    })
}

#[derive(Clone, Debug)]
pub struct PointwiseReport {
    /// Maximum deviation per grid point.
    pub per_point: Vec<f64>,
    pub max: f64,
    pub passed: bool,
}

/// `|(phi^k_{j,m}(t_i), psi^K_{J, m_J - 1 - M}(t_i))_Y - delta|` at every grid
/// point and every index pair.
pub fn verify_pointwise_biorthogonality(sys: &NormalizedChainSystem, tol: &Tolerances) -> PointwiseReport {
    let per_point: Vec<f64> = (0..sys.nt)
        .into_par_iter()
        .map(|i| {
            let mut worst: f64 = 0.0;
            for (k, a) in sys.blocks.iter().enumerate() {
                for (kk, b) in sys.blocks.iter().enumerate() {
                    for (j, m) in a.chains.indices() {
                        for (jj, mm) in b.chains.indices() {
                            let v = sys
                                .inner
                                .inner_y(a.chains.at_grid(j, m, i), b.adjoint.at_grid(jj, b.partner(jj, mm), i));
                            let target = if k == kk && j == jj && m == mm { 1.0 } else { 0.0 };
                            worst = worst.max((v - target).norm());
                        }
                    }
                }
            }
            worst
        })
        .collect();
    let max = per_point.iter().copied().fold(0.0, f64::max);
    PointwiseReport {
        per_point,
        max,
        passed: max <= tol.pointwise,
    }
}

/// Pencil residual of chains multiplied by `e^{2 pi i t}` against
/// `lambda - 2 pi i`.
pub fn shifted_chain_residual(sys: &NormalizedChainSystem, k: usize) -> f64 {
    let b = &sys.blocks[k];
    let shifted = b.chains.modulated(|t| C64::from_polar(1.0, TWO_PI * t));
    let op = sys.operator.clone();
    pencil_residual(&shifted, &|t| op.eval(t), b.lambda() - C64::new(0.0, TWO_PI), 1.0, op.norm_bound())
}

#[derive(Clone, Debug)]
pub struct CollocationEigen {
    pub lambda: C64,
    pub algebraic: usize,
    pub geometric: usize,
}

/// Default number of collocation points of the oracle.
pub const COLLOCATION_POINTS: usize = 63;

/// `D (x) I + blockdiag A(t_i)` on `points` equispaced nodes.
pub fn collocation_matrix(spec: &ProblemSpec, points: usize) -> CMatrix {
    let n = spec.dimension;
    let d = fourier::differentiation_matrix(points);
    let mut c = CMatrix::zeros(n * points, n * points);
    for i in 0..points {
        for k in 0..points {
            if d[(i, k)] != 0.0 {
                for r in 0..n {
                    c[(i * n + r, k * n + r)] = C64::new(d[(i, k)], 0.0);
                }
            }
        }
        let a = spec.operator.eval(i as f64 / points as f64);
        c.view_mut((i * n, i * n), (n, n)).add_assign(&a);
    }
    c
}

trait AddAssignView {
    fn add_assign(&mut self, a: &CMatrix);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, Complex64> {
    fn add_assign(&mut self, a: &CMatrix) {
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                self[(r, c)] += a[(r, c)];
            }
        }
    }
}

/// Eigenvalues of `-(D (x) I + blockdiag A)` inside the strip, one
/// representative per class mod `2 pi i`, clustered with `cluster_tol`.
pub fn collocation_eigens(spec: &ProblemSpec, points: usize, cluster_tol: f64) -> Vec<CollocationEigen> {
    let c = collocation_matrix(spec, points);
    let schur = linalg::ordered_schur(&(-&c), |_| false);
    let window = 1e-3;
    let mut picked: Vec<C64> = (0..c.nrows())
        .map(|i| schur.t[(i, i)])
        .filter(|l| l.im > -PI + window && l.im <= PI + window && spec.strip.contains(l.re))
        .map(|l| exponent(l.exp()))
        .map(|l| {
            let snapped = if (l.im - TWO_PI).abs() < cluster_tol { 0.0 } else { l.im };
            C64::new(l.re, snapped)
        })
        .collect();
    picked.sort_by_key(order_key);
    let mut groups: Vec<Vec<C64>> = Vec::new();
    for l in picked {
        match groups.iter_mut().find(|g| g.iter().any(|x| (*x - l).norm() <= cluster_tol)) {
            Some(g) => g.push(l),
            None => groups.push(vec![l]),
        }
    }
    let norm = c.norm();
    let mut out: Vec<CollocationEigen> = groups
        .into_iter()
        .map(|g| {
            let lambda = g.iter().sum::<C64>() / g.len() as f64;
            let shifted = &c + CMatrix::identity(c.nrows(), c.ncols()) * lambda;
            let geometric = linalg::null_space(&shifted, 1e-8 * norm).ncols().max(1);
            CollocationEigen {
                lambda,
                algebraic: g.len(),
                geometric,
            }
        })
        .collect();
    out.sort_by_key(|e| order_key(&e.lambda));
    out
}

/// `||A(beta + i xi)^{-1}||` in the quadrature norm of `Y`, for each `xi`.
pub fn resolvent_sweep(spec: &ProblemSpec, beta: f64, xi: &[f64], points: usize) -> Result<Vec<f64>> {
    let n = spec.dimension;
    let c = collocation_matrix(spec, points);
    let eig = spec.inner.gram_y.clone().symmetric_eigen();
    let sqrt_g = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
    let sqrt_g_inv = linalg::to_complex(&sqrt_g.clone().try_inverse().expect("SPD Gram"));
    let sqrt_g = linalg::to_complex(&sqrt_g);
    let mut w = CMatrix::zeros(n * points, n * points);
    let mut w_inv = CMatrix::zeros(n * points, n * points);
    for i in 0..points {
        w.view_mut((i * n, i * n), (n, n)).copy_from(&sqrt_g);
        w_inv.view_mut((i * n, i * n), (n, n)).copy_from(&sqrt_g_inv);
    }
    let base = &w * &c * &w_inv;
    xi.par_iter()
        .map(|&x| {
            let shifted = &base + CMatrix::identity(n * points, n * points) * C64::new(beta, x);
            let sv = linalg::singular_values(&shifted);
            let hi = sv.first().copied().unwrap_or(0.0);
            let lo = sv.last().copied().unwrap_or(0.0);
            if lo <= 1e-10 * hi.max(1.0) {
                return Err(Error::SingularResolvent { xi: x });
            }
            Ok(1.0 / lo)
        })
        .collect()
}

/// Closed form of `resolvent_sweep` for a constant operator: the Fourier
/// modes `|k| <= points / 2` diagonalize the collocation matrix, so the
/// inverse norm is the largest `1 / s_min(G^{1/2} A G^{-1/2} + beta + i (xi + 2 pi k))`.
pub fn resolvent_closed_form(spec: &ProblemSpec, beta: f64, xi: &[f64], points: usize) -> Result<Vec<f64>> {
    if !spec.operator.is_constant() {
        return Err(Error::Config("closed form needs a constant operator".into()));
    }
    let n = spec.dimension;
    let eig = spec.inner.gram_y.clone().symmetric_eigen();
    let sqrt_g = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
    let sqrt_g_inv = linalg::to_complex(&sqrt_g.clone().try_inverse().expect("SPD Gram"));
    let a = linalg::to_complex(&sqrt_g) * spec.operator.eval(0.0) * sqrt_g_inv;
    let half = (points / 2) as i64;
    xi.iter()
        .map(|&x| {
            let mut worst: f64 = 0.0;
            for k in -half..=half {
                let shifted = &a + CMatrix::identity(n, n) * C64::new(beta, x + TWO_PI * k as f64);
                let lo = linalg::singular_values(&shifted).last().copied().unwrap_or(0.0);
                if lo <= 1e-14 {
                    return Err(Error::SingularResolvent { xi: x });
                }
                worst = worst.max(1.0 / lo);
            }
            Ok(worst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::parse_problem;
    use crate::propagator::{fundamental_matrix, IntegratorConfig};

    fn system(text: &str) -> (ProblemSpec, FundamentalSolution, NormalizedChainSystem) {
        let spec = parse_problem(text).unwrap();
        let f = fundamental_matrix(&spec, &IntegratorConfig::default()).unwrap();
        let sys = chain_system(&f, &spec.strip, &Tolerances::default()).unwrap();
        (spec, f, sys)
    }

    #[test]
    fn partial_multiplicities_from_ranks() {
        assert_eq!(partial_from_ranks(&[3, 1, 0]), vec![2, 1]);
        assert_eq!(partial_from_ranks(&[2, 0]), vec![1, 1]);
        assert_eq!(partial_from_ranks(&[3, 2, 1, 0]), vec![3]);
    }

    #[test]
    fn exponent_branch() {
        assert_eq!(exponent(C64::new(1.0, -1e-17)), C64::new(0.0, 0.0));
        assert!((exponent(C64::new(-1.0, 1e-17)).im - PI).abs() < 1e-15);
        assert!((exponent(C64::new(0.0, -1.0)).im - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn jordan_block_of_nilpotent_coefficient() {
        let (_, _, sys) = system("[space]\ndim = 2\n[operator]\nA = [[0, 1 + cos(2*pi*t)], [0, 0]]\n[strip]\nbeta1 = -1/2\nbeta2 = 1/2\n");
        assert_eq!(sys.blocks.len(), 1);
        assert_eq!(sys.blocks[0].chains.lengths, vec![2]);
        assert!(sys.biorthogonality_defect() < 1e-10);
        assert!(verify_pointwise_biorthogonality(&sys, &Tolerances::default()).passed);
        assert!(shifted_chain_residual(&sys, 0) < 1e-8);
    }

    #[test]
    fn double_multiplier_two_chains() {
        let (_, _, sys) = system("[space]\ndim = 2\n[operator]\nA = [[0, pi], [-pi, 0]]\n[strip]\nbeta1 = -1/2\nbeta2 = 1/2\n");
        assert_eq!(sys.blocks.len(), 1);
        let b = &sys.blocks[0];
        assert!((b.lambda() - C64::new(0.0, PI)).norm() < 1e-10);
        assert_eq!(b.chains.lengths, vec![1, 1]);
    }

    #[test]
    fn collocation_agrees_on_scalar() {
        let spec = parse_problem("[space]\ndim = 1\n[operator]\nA = [[1/4 + 3/2*cos(2*pi*t)]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n").unwrap();
        let c = collocation_eigens(&spec, COLLOCATION_POINTS, 1e-6);
        assert_eq!(c.len(), 1);
        assert!((c[0].lambda - C64::new(-0.25, 0.0)).norm() < 1e-9);
    }
}
