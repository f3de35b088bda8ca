//! The pointwise projector `P(t)` built from normalized chains, coefficient
//! extraction and the reduced matrix `R`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::fourier;
use crate::linalg;
use crate::path::SampledPath;
use crate::pencil::NormalizedChainSystem;
use crate::problem::ProblemSpec;
use crate::propagator::PHASE_SLOTS;
use crate::{CMatrix, CVector, C64};

/// `P(t)` and its factors at every phase slot.
#[derive(Clone, Debug)]
pub struct ProjectorBundle {
    pub system: Arc<NormalizedChainSystem>,
    /// Index set `(k, j, m)`, lexicographic.
    pub theta: Vec<(usize, usize, usize)>,
    /// Columns `phi^k_{j, m_{k,j} - 1 - m}` at each phase.
    reconstruct: Vec<CMatrix>,
    /// Rows `psi^k_{j,m}^H G` at each phase.
    extract: Vec<CMatrix>,
    projector: Vec<CMatrix>,
}

impl ProjectorBundle {
    pub fn new(system: Arc<NormalizedChainSystem>) -> Self {
        let theta = system.theta();
        let n = system.dim();
        let total = theta.len();
        let g = system.inner.gram_y_complex();
        let phases = PHASE_SLOTS * system.nt;
        let per_phase: Vec<(CMatrix, CMatrix, CMatrix)> = (0..phases)
            .into_par_iter()
            .map(|p| {
                let mut rec = CMatrix::zeros(n, total);
                let mut ext = CMatrix::zeros(total, n);
                for (c, &(k, j, m)) in theta.iter().enumerate() {
                    let b = &system.blocks[k];
                    rec.set_column(c, b.chains.at_phase(j, b.partner(j, m), p));
                    let row = b.adjoint.at_phase(j, m, p).adjoint() * &g;
                    ext.set_row(c, &row);
                }
                let proj = &rec * &ext;
                (rec, ext, proj)
            })
            .collect();
        let mut reconstruct = Vec::with_capacity(phases);
        let mut extract = Vec::with_capacity(phases);
        let mut projector = Vec::with_capacity(phases);
        for (r, e, p) in per_phase {
            reconstruct.push(r);
            extract.push(e);
            projector.push(p);
        }
        Self {
            system,
            theta,
            reconstruct,
            extract,
            projector,
        }
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn nt(&self) -> usize {
        self.system.nt
    }

    /// Total algebraic multiplicity `M`.
    pub fn total(&self) -> usize {
        self.theta.len()
    }

    pub fn projector_at_phase(&self, p: usize) -> &CMatrix {
        &self.projector[p]
    }

    pub fn reconstruct_at_phase(&self, p: usize) -> &CMatrix {
        &self.reconstruct[p]
    }

    pub fn extract_at_phase(&self, p: usize) -> &CMatrix {
        &self.extract[p]
    }

    /// Coefficients `(v, psi^k_{j,m}(t_p))_Y`.
    pub fn coefficients_at_phase(&self, p: usize, v: &CVector) -> CVector {
        &self.extract[p] * v
    }

    /// `sum_theta c_theta phi^k_{j, m_{k,j} - 1 - m}(t_p)`.
    pub fn combine_at_phase(&self, p: usize, c: &CVector) -> CVector {
        &self.reconstruct[p] * c
    }

    pub fn apply_p_at_phase(&self, p: usize, v: &CVector) -> CVector {
        &self.projector[p] * v
    }

    pub fn apply_q_at_phase(&self, p: usize, v: &CVector) -> CVector {
        v - &self.projector[p] * v
    }

    fn grid_phase(&self, t: f64) -> Option<usize> {
        let nt = self.nt() as f64;
        let x = t.rem_euclid(1.0) * nt;
        let r = x.round();
        ((x - r).abs() <= 1e-12 * nt).then(|| PHASE_SLOTS * ((r as usize) % self.nt()))
    }

    /// Chain matrices at arbitrary `t`: table lookup on grid points,
    /// trigonometric interpolation elsewhere.
    fn factors_at(&self, t: f64) -> (CMatrix, CMatrix) {
        if let Some(p) = self.grid_phase(t) {
            return (self.reconstruct[p].clone(), self.extract[p].clone());
        }
        let n = self.dim();
        let total = self.total();
        let g = self.system.inner.gram_y_complex();
        let mut rec = CMatrix::zeros(n, total);
        let mut ext = CMatrix::zeros(total, n);
        for (c, &(k, j, m)) in self.theta.iter().enumerate() {
            let b = &self.system.blocks[k];
            rec.set_column(c, &b.chains.eval(j, b.partner(j, m), t));
            ext.set_row(c, &(b.adjoint.eval(j, m, t).adjoint() * &g));
        }
        (rec, ext)
    }

    pub fn projector_at(&self, t: f64) -> CMatrix {
        if let Some(p) = self.grid_phase(t) {
            return self.projector[p].clone();
        }
        let (r, e) = self.factors_at(t);
        r * e
    }

    /// `P(t) v`.
    pub fn apply_p(&self, t: f64, v: &CVector) -> CVector {
        self.projector_at(t) * v
    }

    /// `Q(t) v = v - P(t) v`.
    pub fn apply_q(&self, t: f64, v: &CVector) -> CVector {
        v - self.apply_p(t, v)
    }

    pub fn coefficients_at(&self, t: f64, v: &CVector) -> CVector {
        self.factors_at(t).1 * v
    }

    pub fn combine_at(&self, t: f64, c: &CVector) -> CVector {
        self.factors_at(t).0 * c
    }
}

/// Coefficient path `u^k_{j,m}(t_i) = (u(t_i), psi^k_{j,m}(t_i))_Y`.
pub fn extract_coefficients(bundle: &ProjectorBundle, u: &SampledPath) -> Result<SampledPath> {
    if u.window.nt != bundle.nt() {
        return Err(Error::DimensionMismatch(format!(
            "path grid has {} points per period, bundle has {}",
            u.window.nt,
            bundle.nt()
        )));
    }
    if u.dim() != bundle.dim() {
        return Err(Error::DimensionMismatch(format!(
            "path has dimension {}, expected {}",
            u.dim(),
            bundle.dim()
        )));
    }
    let values = u
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| bundle.coefficients_at_phase(u.window.phase(i), v))
        .collect();
    SampledPath::new(u.window, values)
}

/// `sum_theta c_theta(t_i) phi^k_{j, m_{k,j} - 1 - m}(t_i)`.
pub fn reconstruct(bundle: &ProjectorBundle, coeffs: &SampledPath) -> SampledPath {
    let values = coeffs
        .values
        .iter()
        .enumerate()
        .map(|(i, c)| bundle.combine_at_phase(coeffs.window.phase(i), c))
        .collect();
    SampledPath {
        window: coeffs.window,
        values,
    }
}

/// `P(t_i) u(t_i)` and `Q(t_i) u(t_i)` along a path.
pub fn split_path(bundle: &ProjectorBundle, u: &SampledPath) -> (SampledPath, SampledPath) {
    let mut p = Vec::with_capacity(u.values.len());
    let mut q = Vec::with_capacity(u.values.len());
    for (i, v) in u.values.iter().enumerate() {
        let pv = bundle.apply_p_at_phase(u.window.phase(i), v);
        q.push(v - &pv);
        p.push(pv);
    }
    (
        SampledPath {
            window: u.window,
            values: p,
        },
        SampledPath {
            window: u.window,
            values: q,
        },
    )
}

/// The constant matrix `R` with `(R u)^k_{j,m} = lambda_k u^k_{j,m} + u^k_{j,m-1}`.
#[derive(Clone, Debug)]
pub struct ReducedMatrix {
    pub matrix: CMatrix,
    /// `(lambda, offset, length)` of every chain block.
    pub blocks: Vec<(C64, usize, usize)>,
}

impl ReducedMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `e^{R t}` from the closed form of each Jordan block.
    pub fn exp(&self, t: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for &(lambda, offset, len) in &self.blocks {
            let e = (lambda * t).exp();
            for m in 0..len {
                let mut w = 1.0;
                for d in 0..=m {
                    if d > 0 {
                        w *= t / d as f64;
                    }
                    out[(offset + m, offset + m - d)] = e * w;
                }
            }
        }
        out
    }

    pub fn eigenvalues(&self) -> Vec<C64> {
        self.blocks.iter().flat_map(|&(l, _, len)| std::iter::repeat(l).take(len)).collect()
    }
}

pub fn build_r(bundle: &ProjectorBundle) -> ReducedMatrix {
    let total = bundle.total();
    let mut matrix = CMatrix::zeros(total, total);
    let mut blocks = Vec::new();
    for (c, &(k, j, m)) in bundle.theta.iter().enumerate() {
        let lambda = bundle.system.blocks[k].lambda();
        matrix[(c, c)] = lambda;
        if m > 0 {
            matrix[(c, c - 1)] = C64::new(1.0, 0.0);
        } else {
            blocks.push((lambda, c, bundle.system.blocks[k].chains.lengths[j]));
        }
    }
    ReducedMatrix { matrix, blocks }
}

#[derive(Clone, Debug)]
pub struct ProjectorReport {
    pub idempotency: f64,
    pub rank_min: usize,
    pub rank_max: usize,
    pub expected_rank: usize,
    pub passed: bool,
}

/// `max ||P(t)^2 - P(t)||` and the rank of `P(t)` over the grid.
pub fn verify_projector(bundle: &ProjectorBundle, tol: &Tolerances) -> ProjectorReport {
    let results: Vec<(f64, usize)> = (0..bundle.nt())
        .into_par_iter()
        .map(|i| {
            let p = bundle.projector_at_phase(PHASE_SLOTS * i);
            let defect = (p * p - p).norm();
            let scale = p.norm().max(1.0);
            (defect, linalg::rank(p, 1e-8 * scale))
        })
        .collect();
    let idempotency = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let rank_min = results.iter().map(|r| r.1).min().unwrap_or(0);
    let rank_max = results.iter().map(|r| r.1).max().unwrap_or(0);
    let expected_rank = bundle.total();
    ProjectorReport {
        idempotency,
        rank_min,
        rank_max,
        expected_rank,
        passed: idempotency <= tol.proj && rank_min == expected_rank && rank_max == expected_rank,
    }
}

/// A random periodic vector path `sum_{|m| <= degree} c_m e^{2 pi i m t}`
/// sampled on one period.
pub fn random_trig_path(dim: usize, nt: usize, degree: usize, real: bool, rng: &mut ChaCha8Rng) -> Vec<CVector> {
    let d = degree as i64;
    let mut coeffs: Vec<(i64, CVector)> = Vec::new();
    for m in -d..=d {
        let scale = 1.0 / (1.0 + m.abs() as f64);
        let c = CVector::from_fn(dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale);
        coeffs.push((m, c));
    }
    if real {
        for i in 0..coeffs.len() {
            let m = coeffs[i].0;
            if m < 0 {
                let partner = coeffs.iter().find(|(mm, _)| *mm == -m).unwrap().1.map(|z| z.conj());
                coeffs[i].1 = partner;
            } else if m == 0 {
                coeffs[i].1 = coeffs[i].1.map(|z| C64::new(z.re, 0.0));
            }
        }
    }
    (0..nt)
        .map(|i| {
            let t = i as f64 / nt as f64;
            let mut v = CVector::zeros(dim);
            for (m, c) in &coeffs {
                v += c * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * *m as f64 * t);
            }
            v
        })
        .collect()
}

/// `L u = u' + A u` for a periodic path on the one-period grid.
pub fn apply_l_periodic(spec: &ProblemSpec, u: &[CVector]) -> Vec<CVector> {
    let nt = u.len();
    let d = fourier::differentiate(u);
    d.into_iter()
        .enumerate()
        .map(|(i, du)| du + spec.operator.eval(i as f64 / nt as f64) * &u[i])
        .collect()
}

/// `sum ((D_t - lambda_k) u^k_{j,m} - u^k_{j,m-1}) phi^k_{j, m_{k,j} - 1 - m}` for
/// a periodic path on the one-period grid.
pub fn apply_l_p(bundle: &ProjectorBundle, u: &[CVector]) -> Vec<CVector> {
    let nt = u.len();
    let coeffs: Vec<CVector> = u
        .iter()
        .enumerate()
        .map(|(i, v)| bundle.coefficients_at_phase(PHASE_SLOTS * i, v))
        .collect();
    let dc = fourier::differentiate(&coeffs);
    let r = build_r(bundle);
    (0..nt)
        .map(|i| {
            let g = &dc[i] - &r.matrix * &coeffs[i];
            bundle.combine_at_phase(PHASE_SLOTS * i, &g)
        })
        .collect()
}

fn quadrature_norm(spec: &ProblemSpec, v: &[CVector]) -> f64 {
    let s: f64 = v.iter().map(|x| spec.inner.norm_y(x).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct CommutationReport {
    /// `||L(P u) - P(L u)||` per random path.
    pub commutator: Vec<f64>,
    /// `||apply_l_p(u) - L(P u)||` per random path.
    pub two_path: Vec<f64>,
    /// `||P(L u)||` and `||L(P u)||` for paths in the range of `Q`.
    pub complement: Vec<f64>,
    pub max: f64,
    pub passed: bool,
}

/// Commutation of `P` with `L` on `count` random trigonometric paths.
pub fn verify_commutation(bundle: &ProjectorBundle, spec: &ProblemSpec, count: usize, seed: u64, tol: &Tolerances) -> CommutationReport {
    let nt = bundle.nt();
    let n = bundle.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths: Vec<Vec<CVector>> = (0..count).map(|_| random_trig_path(n, nt, 3, false, &mut rng)).collect();
    let project = |u: &[CVector], q: bool| -> Vec<CVector> {
        u.iter()
            .enumerate()
            .map(|(i, v)| {
                if q {
                    bundle.apply_q_at_phase(PHASE_SLOTS * i, v)
                } else {
                    bundle.apply_p_at_phase(PHASE_SLOTS * i, v)
                }
            })
            .collect()
    };
    let diff = |a: &[CVector], b: &[CVector]| -> Vec<CVector> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let results: Vec<(f64, f64, f64)> = paths
        .par_iter()
        .map(|u| {
            let lpu = apply_l_periodic(spec, &project(u, false));
            let plu = project(&apply_l_periodic(spec, u), false);
            let commutator = quadrature_norm(spec, &diff(&lpu, &plu));
            let two_path = quadrature_norm(spec, &diff(&apply_l_p(bundle, u), &lpu));
            let uq = project(u, true);
            let lpuq = apply_l_periodic(spec, &project(&uq, false));
            let pluq = project(&apply_l_periodic(spec, &uq), false);
            let complement = quadrature_norm(spec, &lpuq).max(quadrature_norm(spec, &pluq));
            (commutator, two_path, complement)
        })
        .collect();
    let commutator: Vec<f64> = results.iter().map(|r| r.0).collect();
    let two_path: Vec<f64> = results.iter().map(|r| r.1).collect();
    let complement: Vec<f64> = results.iter().map(|r| r.2).collect();
    let max = commutator.iter().chain(&two_path).chain(&complement).copied().fold(0.0, f64::max);
    CommutationReport {
        commutator,
        two_path,
        complement,
        max,
        passed: max <= tol.comm,
    }
}

/// Convenience: the projector bundle of a chain system.
pub fn projector_bundle(system: NormalizedChainSystem) -> ProjectorBundle {
    ProjectorBundle::new(Arc::new(system))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::pencil::chain_system;
    use crate::propagator::{fundamental_matrix, IntegratorConfig};

    fn bundle(text: &str) -> (ProblemSpec, ProjectorBundle) {
        let spec = crate::format::parse_problem(text).unwrap();
        let f = fundamental_matrix(&spec, &IntegratorConfig::default()).unwrap();
        let sys = chain_system(&f, &spec.strip, &Tolerances::default()).unwrap();
        (spec, projector_bundle(sys))
    }

    #[test]
    fn e1_projects_onto_first_axis() {
        let (_, b) = bundle(bundled::E1);
        let v = CVector::from_element(3, crate::C64::new(1.0, 0.0));
        let p = b.apply_p(0.3, &v);
        assert!((p[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(p[1].norm() < 1e-12 && p[2].norm() < 1e-12);
    }

    #[test]
    fn e3_reduced_matrix() {
        let (_, b) = bundle(bundled::E3);
        let r = build_r(&b);
        assert_eq!(r.matrix.nrows(), 2);
        assert_eq!(r.matrix[(1, 0)], C64::new(1.0, 0.0));
        assert_eq!(r.matrix[(0, 1)], C64::new(0.0, 0.0));
        let e = r.exp(0.5);
        assert!((e[(1, 0)] - C64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn commutation_on_e3() {
        let (spec, b) = bundle(bundled::E3);
        let report = verify_commutation(&b, &spec, 5, 7, &Tolerances::default());
        assert!(report.passed, "{report:?}");
        assert!(verify_projector(&b, &Tolerances::default()).passed);
    }
}
