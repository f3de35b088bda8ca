//! Real form of the projector and reduced system for real operators.
//!
//! Exponents with `0 < Im lambda < pi` are kept together with their real and
//! imaginary chain parts; their conjugate partners `conj(lambda) + 2 pi i`
//! contribute the complex conjugate. Exponents with `Im lambda = 0` have real
//! chains and those with `Im lambda = pi` have real anti-periodic chains
//! `e^{i pi t} phi(t)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::path::{sample_nodes, SampledPath, Window};
use crate::pencil::{shifted_chain_residual, ChainFunctions, NormalizedChainSystem, PencilEigenvalue};
use crate::projector::{build_r, ProjectorBundle, ReducedMatrix};
use crate::propagator::{phase_time, GAUSS_NODES, GAUSS_WEIGHTS, PHASE_SLOTS};
use crate::splitting::solve_finite_nodes;
use crate::{CMatrix, CVector, RMatrix, C64};

const IMAG_TOL: f64 = 1e-9;

/// Partition of the strip exponents of a real problem.
#[derive(Clone, Debug, PartialEq)]
pub struct RealPairing {
    /// Number of exponents with `0 < Im lambda < pi`.
    pub sigma: usize,
    /// `(s, partner)` block indices, `lambda_partner = conj(lambda_s) + 2 pi i`.
    pub pairs: Vec<(usize, usize)>,
    /// Blocks with `Im lambda = 0`.
    pub zero: Vec<usize>,
    /// Blocks with `Im lambda = pi`.
    pub pi: Vec<usize>,
}

impl RealPairing {
    pub fn epsilon0(&self) -> usize {
        self.zero.len()
    }

    pub fn epsilon_sigma1(&self) -> usize {
        self.pi.len()
    }
}

fn im_class(lambda: C64) -> i8 {
    let b = lambda.im;
    if b.abs() <= IMAG_TOL || (b - 2.0 * PI).abs() <= IMAG_TOL {
        0
    } else if (b - PI).abs() <= IMAG_TOL {
        2
    } else if b < PI {
        1
    } else {
        3
    }
}

/// Re-numbers strip exponents of a real problem into conjugate pairs and the
/// exceptional points `0` and `pi i`.
pub fn renumber(eigs: &[PencilEigenvalue], real: bool) -> Result<RealPairing> {
    if !real {
        return Err(Error::NotReal("problem is not flagged real".into()));
    }
    let mut pairing = RealPairing {
        sigma: 0,
        pairs: Vec::new(),
        zero: Vec::new(),
        pi: Vec::new(),
    };
    let mut used = vec![false; eigs.len()];
    for (k, e) in eigs.iter().enumerate() {
        match im_class(e.lambda) {
            0 => pairing.zero.push(k),
            2 => pairing.pi.push(k),
            1 => {
                let target = e.lambda.conj() + C64::new(0.0, 2.0 * PI);
                let tol = 1e-6 * target.norm().max(1.0);
                let partner = eigs
                    .iter()
                    .enumerate()
                    .find(|(q, f)| !used[*q] && im_class(f.lambda) == 3 && (f.lambda - target).norm() <= tol)
                    .map(|(q, _)| q);
                match partner {
                    Some(q) if eigs[q].partial == e.partial => {
                        used[q] = true;
                        pairing.pairs.push((k, q));
                    }
                    _ => return Err(Error::UnpairedEigenvalue(format!("{}", e.lambda))),
                }
            }
            _ => {}
        }
    }
    if let Some((_, e)) = eigs.iter().enumerate().find(|(k, e)| im_class(e.lambda) == 3 && !used[*k]) {
        return Err(Error::UnpairedEigenvalue(format!("{}", e.lambda)));
    }
    pairing.sigma = pairing.pairs.len();
    Ok(pairing)
}

/// One real coordinate of the reduced system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealCoordinate {
    /// `(u, Re psi^s_{j,m})`.
    Hat { k: usize, j: usize, m: usize },
    /// `(u, Im psi^s_{j,m})`.
    Tilde { k: usize, j: usize, m: usize },
    /// `(u, psi^0_{j,m})` for a real exponent.
    Zero { k: usize, j: usize, m: usize },
    /// `(u, e^{i pi t} psi_{j,m})` for an exponent on `Im lambda = pi`.
    Pi { k: usize, j: usize, m: usize },
}

impl RealCoordinate {
    pub fn label(&self) -> String {
        match *self {
            RealCoordinate::Hat { k, j, m } => format!("hat[{k},{j},{m}]"),
            RealCoordinate::Tilde { k, j, m } => format!("tilde[{k},{j},{m}]"),
            RealCoordinate::Zero { k, j, m } => format!("zero[{k},{j},{m}]"),
            RealCoordinate::Pi { k, j, m } => format!("pi[{k},{j},{m}]"),
        }
    }
}

/// Chain sample sets with the phase rotation that makes them real, or the
/// anti-periodic factor applied.
/// `[j][m][p]` real samples.
type RealSamples = Vec<Vec<Vec<DVector<f64>>>>;

fn real_representatives(chains: &ChainFunctions, adjoint: &ChainFunctions, anti: bool) -> (RealSamples, RealSamples, Vec<C64>, f64) {
    let nt = chains.nt();
    let twist = |p: usize| {
        if anti {
            C64::from_polar(1.0, PI * phase_time(nt, p))
        } else {
            C64::new(1.0, 0.0)
        }
    };
    let mut phis = Vec::new();
    let mut psis = Vec::new();
    let mut rotations = Vec::new();
    let mut worst: f64 = 0.0;
    for j in 0..chains.count() {
        // Rotation minimising |Im(e^{i theta} phi_{j,0})|.
        let (mut aa, mut ab, mut bb) = (0.0, 0.0, 0.0);
        for (p, v) in chains.samples[j][0].iter().enumerate() {
            let w = v * twist(p);
            for z in w.iter() {
                aa += z.re * z.re;
                ab += z.re * z.im;
                bb += z.im * z.im;
            }
        }
        // Minimiser of s^2 aa + 2 s c ab + c^2 bb over (s, c) = (sin, cos).
        let theta = 0.5 * (2.0 * ab).atan2(bb - aa) + 0.5 * PI;
        let rot = C64::from_polar(1.0, theta);
        rotations.push(rot);
        let mut take = |set: &ChainFunctions| -> Vec<Vec<DVector<f64>>> {
            (0..set.lengths[j])
                .map(|m| {
                    let samples = &set.samples[j][m];
                    let scale = samples.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
                    samples
                        .iter()
                        .enumerate()
                        .map(|(p, v)| {
                            let w = v * (rot * twist(p));
                            worst = worst.max(w.iter().map(|z| z.im.abs()).fold(0.0, f64::max) / scale);
                            w.map(|z| z.re)
                        })
                        .collect()
                })
                .collect()
        };
        phis.push(take(chains));
        psis.push(take(adjoint));
    }
    (phis, psis, rotations, worst)
}

/// Real evaluator of `P(t)` for real vectors and the real reduced matrix.
#[derive(Clone, Debug)]
pub struct RealProjectorBundle {
    pub pairing: RealPairing,
    pub layout: Vec<RealCoordinate>,
    pub r_real: RMatrix,
    /// Largest relative imaginary part removed by re-phasing.
    pub rephasing_residual: f64,
    nt: usize,
    /// Columns per coordinate at each phase of `[0, 1)`.
    reconstruct: Vec<RMatrix>,
    /// Rows `psi^T G` per coordinate at each phase of `[0, 1)`.
    extract: Vec<RMatrix>,
    /// Coordinates that flip sign every period.
    anti: Vec<bool>,
    /// Phase `c` with `(u, psi) = c x` for re-phased coordinates.
    rotation: Vec<C64>,
}

pub fn real_projector(bundle: &ProjectorBundle, pairing: &RealPairing) -> Result<RealProjectorBundle> {
    let sys = &bundle.system;
    if !sys.operator.is_real() {
        return Err(Error::NotReal("operator has complex coefficients".into()));
    }
    let n = sys.dim();
    let nt = sys.nt;
    let phases = PHASE_SLOTS * nt;
    let g = sys.inner.gram_y_complex().map(|z| z.re);
    let mut layout = Vec::new();
    let mut anti = Vec::new();
    let mut rotation = Vec::new();
    let mut r_diag: Vec<(f64, f64)> = Vec::new();
    // Column and row sample sets per coordinate, with the column factor.
    let mut cols: Vec<(Vec<DVector<f64>>, f64)> = Vec::new();
    let mut rows: Vec<Vec<DVector<f64>>> = Vec::new();
    let part = |set: &ChainFunctions, j: usize, m: usize, im: bool| -> Vec<DVector<f64>> {
        set.samples[j][m].iter().map(|v| v.map(|z| if im { z.im } else { z.re })).collect()
    };
    for &(k, _) in &pairing.pairs {
        let b = &sys.blocks[k];
        let lambda = b.lambda();
        for (j, m) in b.chains.indices() {
            let rev = b.partner(j, m);
            layout.push(RealCoordinate::Hat { k, j, m });
            cols.push((part(&b.chains, j, rev, false), 2.0));
            rows.push(part(&b.adjoint, j, m, false));
            layout.push(RealCoordinate::Tilde { k, j, m });
            cols.push((part(&b.chains, j, rev, true), 2.0));
            rows.push(part(&b.adjoint, j, m, true));
            anti.extend([false, false]);
            rotation.extend([C64::new(1.0, 0.0); 2]);
            r_diag.push((lambda.re, lambda.im));
            r_diag.push((lambda.re, lambda.im));
        }
    }
    let mut worst: f64 = 0.0;
    for (list, is_pi) in [(&pairing.zero, false), (&pairing.pi, true)] {
        for &k in list {
            let b = &sys.blocks[k];
            let (phis, psis, rotations, res) = real_representatives(&b.chains, &b.adjoint, is_pi);
            worst = worst.max(res);
            for (j, m) in b.chains.indices() {
                layout.push(if is_pi {
                    RealCoordinate::Pi { k, j, m }
                } else {
                    RealCoordinate::Zero { k, j, m }
                });
                cols.push((phis[j][b.partner(j, m)].clone(), 1.0));
                rows.push(psis[j][m].clone());
                anti.push(is_pi);
                rotation.push(rotations[j]);
                r_diag.push((b.lambda().re, 0.0));
            }
        }
    }
    if worst > 1e-8 {
        return Err(Error::Rephasing(format!("imaginary residual {worst:e}")));
    }
    let dim = layout.len();
    let (reconstruct, extract): (Vec<RMatrix>, Vec<RMatrix>) = (0..phases)
        .into_par_iter()
        .map(|p| {
            let mut rec = RMatrix::zeros(n, dim);
            let mut ext = RMatrix::zeros(dim, n);
            for c in 0..dim {
                rec.set_column(c, &(&cols[c].0[p] * cols[c].1));
                ext.set_row(c, &(rows[c][p].transpose() * &g));
            }
            (rec, ext)
        })
        .unzip();
    let mut r_real = RMatrix::zeros(dim, dim);
    let mut c = 0;
    while c < dim {
        match layout[c] {
            RealCoordinate::Hat { m, .. } => {
                let (a, mu) = r_diag[c];
                r_real[(c, c)] = a;
                r_real[(c, c + 1)] = mu;
                r_real[(c + 1, c)] = -mu;
                r_real[(c + 1, c + 1)] = a;
                if m > 0 {
                    r_real[(c, c - 2)] = 1.0;
                    r_real[(c + 1, c - 1)] = 1.0;
                }
                c += 2;
            }
            RealCoordinate::Zero { m, .. } | RealCoordinate::Pi { m, .. } => {
                r_real[(c, c)] = r_diag[c].0;
                if m > 0 {
                    r_real[(c, c - 1)] = 1.0;
                }
                c += 1;
            }
            RealCoordinate::Tilde { .. } => unreachable!("tilde coordinates follow their hat"),
        }
    }
    Ok(RealProjectorBundle {
        pairing: pairing.clone(),
        layout,
        r_real,
        rephasing_residual: worst,
        nt,
        reconstruct,
        extract,
        anti,
        rotation,
    })
}

fn phase_of(nt: usize, t: f64) -> Option<(usize, f64)> {
    let x = t * nt as f64;
    let r = x.round();
    if (x - r).abs() > 1e-9 * x.abs().max(1.0) {
        return None;
    }
    let i = r as i64;
    let sign = if i.div_euclid(nt as i64) % 2 == 0 { 1.0 } else { -1.0 };
    Some((PHASE_SLOTS * i.rem_euclid(nt as i64) as usize, sign))
}

impl RealProjectorBundle {
    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Real `P(t_p)` for `t_p` in `[0, 1)`.
    pub fn projector_at_phase(&self, p: usize) -> RMatrix {
        &self.reconstruct[p] * &self.extract[p]
    }

    fn signs(&self, sign: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.anti.iter().map(|&a| if a { sign } else { 1.0 }))
    }

    /// Real coordinates of `u` at phase `p` of absolute time with period
    /// count parity `sign`.
    pub fn coefficients_at_phase(&self, p: usize, sign: f64, u: &DVector<f64>) -> DVector<f64> {
        (&self.extract[p] * u).component_mul(&self.signs(sign))
    }

    pub fn combine_at_phase(&self, p: usize, sign: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.reconstruct[p] * x.component_mul(&self.signs(sign))
    }

    /// Real coordinates at a grid time.
    pub fn coefficients_at(&self, t: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (p, s) = phase_of(self.nt, t).ok_or(Error::OffGrid { tau: t })?;
        Ok(self.coefficients_at_phase(p, s, u))
    }

    pub fn apply(&self, t: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (p, _) = phase_of(self.nt, t).ok_or(Error::OffGrid { tau: t })?;
        Ok(&self.reconstruct[p] * (&self.extract[p] * u))
    }

    /// Complex coefficient `(u, psi^k_{j,m}(t))` of the kept blocks from the
    /// real coordinates, in layout order with hat/tilde merged.
    pub fn to_complex(&self, t: f64, x: &DVector<f64>) -> Vec<((usize, usize, usize), C64)> {
        let mut out = Vec::new();
        let mut c = 0;
        while c < self.dim() {
            match self.layout[c] {
                RealCoordinate::Hat { k, j, m } => {
                    out.push(((k, j, m), C64::new(x[c], -x[c + 1])));
                    c += 2;
                }
                RealCoordinate::Zero { k, j, m } => {
                    out.push(((k, j, m), self.rotation[c] * x[c]));
                    c += 1;
                }
                RealCoordinate::Pi { k, j, m } => {
                    out.push(((k, j, m), self.rotation[c] * C64::from_polar(x[c], PI * t)));
                    c += 1;
                }
                RealCoordinate::Tilde { .. } => c += 1,
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RealAgreementReport {
    /// `max |P_real v - P v|` over grid points and vectors.
    pub agreement: f64,
    /// Largest imaginary part of the complex `P v`.
    pub imaginary: f64,
    /// Distance of the spectrum of `R_real` from `{lambda_s, conj lambda_s}`.
    pub spectrum: f64,
    pub passed: bool,
}

/// Real and complex projectors on random real vectors at every grid point,
/// and the spectrum of `R_real`.
pub fn verify_real_projector(
    bundle: &ProjectorBundle,
    real: &RealProjectorBundle,
    count: usize,
    seed: u64,
    tol_proj: f64,
) -> RealAgreementReport {
    let n = bundle.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors: Vec<DVector<f64>> = (0..count).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let (agreement, imaginary) = (0..bundle.nt())
        .into_par_iter()
        .map(|i| {
            let p = PHASE_SLOTS * i;
            let pr = real.projector_at_phase(p);
            let pc = bundle.projector_at_phase(p);
            let mut a: f64 = 0.0;
            let mut im: f64 = 0.0;
            for v in &vectors {
                let x = &pr * v;
                let z = pc * v.map(|r| C64::new(r, 0.0));
                a = a.max((z.map(|w| w.re) - x).norm());
                im = im.max(z.iter().map(|w| w.im.abs()).fold(0.0, f64::max));
            }
            (a, im)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));
    let sys = &bundle.system;
    let mut expected: Vec<C64> = Vec::new();
    for &(k, _) in &real.pairing.pairs {
        let b = &sys.blocks[k];
        for _ in 0..b.chains.total() {
            expected.push(b.lambda());
            expected.push(b.lambda().conj());
        }
    }
    for &k in real.pairing.zero.iter().chain(&real.pairing.pi) {
        let b = &sys.blocks[k];
        for _ in 0..b.chains.total() {
            expected.push(C64::new(b.lambda().re, 0.0));
        }
    }
    let spectrum = spectrum_distance(&real.r_real, &expected);
    RealAgreementReport {
        agreement,
        imaginary,
        spectrum,
        passed: agreement <= tol_proj && spectrum <= 1e-10,
    }
}

/// Matches eigenvalues of `R_real` to `expected` greedily. Jordan blocks of
/// `R_real` are handled by reading eigenvalues off its block structure: each
/// 2x2 diagonal block `[[a, b], [-b, a]]` contributes `a +- ib`.
fn spectrum_distance(r: &RMatrix, expected: &[C64]) -> f64 {
    let dim = r.nrows();
    if dim != expected.len() {
        return f64::INFINITY;
    }
    // R_real is block lower triangular with 1x1 and 2x2 diagonal blocks.
    let mut eigs = Vec::with_capacity(dim);
    let mut c = 0;
    while c < dim {
        if c + 1 < dim && r[(c, c + 1)] != 0.0 {
            let block = DMatrix::from_fn(2, 2, |i, j| r[(c + i, c + j)]);
            for z in block.complex_eigenvalues().iter() {
                eigs.push(*z);
            }
            c += 2;
        } else {
            eigs.push(C64::new(r[(c, c)], 0.0));
            c += 1;
        }
    }
    let mut used = vec![false; eigs.len()];
    let mut worst: f64 = 0.0;
    for e in expected {
        let best = eigs
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .min_by(|a, b| (a.1 - e).norm().total_cmp(&(b.1 - e).norm()));
        match best {
            Some((i, z)) => {
                used[i] = true;
                worst = worst.max((z - e).norm());
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

/// Real coordinates of a real forcing and consistency of the real reduced
/// system with the complex one.
#[derive(Clone, Debug)]
pub struct RealSystem {
    /// Real forcing coordinates `(f_hat, f_tilde, f^0, f^pi)` at grid points.
    pub forcing: SampledPathReal,
    /// Solution of `x' = R_real x + f` with `x(tau) = xi`.
    pub solution: SampledPathReal,
    /// `max |F_complex - map(F_real)|` at grid points.
    pub forcing_defect: f64,
    /// `max |R c - map(R_real x)|` over the solution samples.
    pub matrix_defect: f64,
    /// `max |c - map(x)|` between the complex and real solutions.
    pub path_defect: f64,
}

/// Real vector-valued samples on a window.
#[derive(Clone, Debug)]
pub struct SampledPathReal {
    pub window: Window,
    pub values: Vec<DVector<f64>>,
}

/// Assembles and solves the real reduced system for a real forcing, and
/// compares it with the complex coefficient system.
pub fn real_system_rhs(
    bundle: &ProjectorBundle,
    real: &RealProjectorBundle,
    f: &(dyn Fn(f64) -> DVector<f64> + Sync),
    window: &Window,
    tau: f64,
    xi: &DVector<f64>,
) -> Result<RealSystem> {
    if xi.len() != real.dim() {
        return Err(Error::DimensionMismatch(format!(
            "real coefficient vector has length {}, expected {}",
            xi.len(),
            real.dim()
        )));
    }
    let i0 = window.index_of(tau).ok_or(Error::OffGrid { tau })?;
    let nt = window.nt;
    let h = window.spacing();
    let fnodes: Vec<[DVector<f64>; 3]> = (0..window.intervals)
        .map(|i| {
            let node = |q: usize| {
                let t = window.node_time(i, q);
                let sign = if t.floor().rem_euclid(2.0) == 0.0 { 1.0 } else { -1.0 };
                real.coefficients_at_phase(window.node_phase(i, q), sign, &f(t))
            };
            [node(0), node(1), node(2)]
        })
        .collect();
    let forcing = SampledPathReal {
        window: *window,
        values: (0..window.len())
            .map(|i| {
                let t = window.time(i);
                let (p, s) = phase_of(nt, t).expect("grid time");
                real.coefficients_at_phase(p, s, &f(t))
            })
            .collect(),
    };
    let r = &real.r_real;
    let step = (r * h).exp();
    let back = (r * -h).exp();
    let fwd_node: Vec<RMatrix> = GAUSS_NODES.iter().map(|q| (r * ((1.0 - q) * h)).exp()).collect();
    let back_node: Vec<RMatrix> = GAUSS_NODES.iter().map(|q| (r * (-q * h)).exp()).collect();
    let mut values = vec![DVector::zeros(real.dim()); window.len()];
    values[i0] = xi.clone();
    for i in i0..window.intervals {
        let mut v = &step * &values[i];
        for q in 0..3 {
            v += &fwd_node[q] * &fnodes[i][q] * (h * GAUSS_WEIGHTS[q]);
        }
        values[i + 1] = v;
    }
    for i in (0..i0).rev() {
        let mut v = &back * &values[i + 1];
        for q in 0..3 {
            v -= &back_node[q] * &fnodes[i][q] * (h * GAUSS_WEIGHTS[q]);
        }
        values[i] = v;
    }
    let solution = SampledPathReal { window: *window, values };

    // Complex system restricted to the kept blocks.
    let position = |key: (usize, usize, usize)| bundle.theta.iter().position(|&x| x == key).expect("kept index");
    let kept: Vec<usize> = real
        .to_complex(0.0, &DVector::zeros(real.dim()))
        .iter()
        .map(|(key, _)| position(*key))
        .collect();
    let full_r = build_r(bundle);
    let r_kept = ReducedMatrix {
        matrix: CMatrix::from_fn(kept.len(), kept.len(), |a, b| full_r.matrix[(kept[a], kept[b])]),
        blocks: full_r
            .blocks
            .iter()
            .filter_map(|&(l, off, len)| kept.iter().position(|&a| a == off).map(|o| (l, o, len)))
            .collect(),
    };
    let to_c = |t: f64, x: &DVector<f64>| CVector::from_iterator(kept.len(), real.to_complex(t, x).into_iter().map(|(_, z)| z));
    let mut forcing_defect: f64 = 0.0;
    for i in 0..window.len() {
        let t = window.time(i);
        let fc = bundle.coefficients_at_phase(window.phase(i), &f(t).map(|r| C64::new(r, 0.0)));
        let fk = CVector::from_iterator(kept.len(), kept.iter().map(|&a| fc[a]));
        forcing_defect = forcing_defect.max((fk - to_c(t, &forcing.values[i])).norm());
    }
    let mut matrix_defect: f64 = 0.0;
    for (i, x) in solution.values.iter().enumerate() {
        let t = window.time(i);
        let lhs = &r_kept.matrix * to_c(t, x);
        // The factor e^{i pi t} of anti-periodic coordinates contributes
        // i pi to the complex derivative.
        let cx = to_c(t, x);
        let mut rhs = to_c(t, &(r * x));
        let merged = real.layout.iter().filter(|c| !matches!(c, RealCoordinate::Tilde { .. }));
        for (b, coord) in merged.enumerate() {
            if matches!(coord, RealCoordinate::Pi { .. }) {
                rhs[b] += C64::new(0.0, PI) * cx[b];
            }
        }
        matrix_defect = matrix_defect.max((lhs - rhs).norm());
    }
    let c_nodes = sample_nodes(window, |i, q, t| {
        let fc = bundle.coefficients_at_phase(window.node_phase(i, q), &f(t).map(|r| C64::new(r, 0.0)));
        CVector::from_iterator(kept.len(), kept.iter().map(|&a| fc[a]))
    });
    let c_path: SampledPath = solve_finite_nodes(&r_kept, &c_nodes, window, tau, &to_c(tau, xi))?;
    let path_defect = (0..window.len())
        .map(|i| (&c_path.values[i] - to_c(window.time(i), &solution.values[i])).norm())
        .fold(0.0, f64::max);
    Ok(RealSystem {
        forcing,
        solution,
        forcing_defect,
        matrix_defect,
        path_defect,
    })
}

#[derive(Clone, Debug)]
pub struct ConjugationReport {
    /// `max |P_partner(t) - conj P_s(t)|` over pairs and grid points.
    pub conjugation: f64,
    /// Largest pencil residual of `e^{2 pi i t}`-shifted chains at `lambda - 2 pi i`.
    pub shift_residual: f64,
    /// `max |P_shifted(t) - P(t)|` for the shifted chains.
    pub shift_projector: f64,
    /// `max |P - sum_s (P_s + conj P_s) - P_0 - P_pi|`.
    pub decomposition: f64,
    pub passed: bool,
}

fn block_projector(sys: &NormalizedChainSystem, chains: &ChainFunctions, adjoint: &ChainFunctions, p: usize) -> CMatrix {
    let g = sys.inner.gram_y_complex();
    let n = sys.dim();
    let mut out = CMatrix::zeros(n, n);
    for (j, m) in chains.indices() {
        let rev = chains.lengths[j] - 1 - m;
        out += chains.at_phase(j, rev, p) * (adjoint.at_phase(j, m, p).adjoint() * &g);
    }
    out
}

pub fn verify_conjugation(bundle: &ProjectorBundle, pairing: &RealPairing, tol_proj: f64) -> ConjugationReport {
    let sys = &bundle.system;
    let nt = sys.nt;
    let shifted: Vec<(ChainFunctions, ChainFunctions)> = sys
        .blocks
        .iter()
        .map(|b| {
            let g = |t: f64| C64::from_polar(1.0, 2.0 * PI * t);
            (b.chains.modulated(g), b.adjoint.modulated(g))
        })
        .collect();
    let (conjugation, shift_projector, decomposition) = (0..nt)
        .into_par_iter()
        .map(|i| {
            let p = PHASE_SLOTS * i;
            let per: Vec<CMatrix> = sys.blocks.iter().map(|b| block_projector(sys, &b.chains, &b.adjoint, p)).collect();
            let mut conj: f64 = 0.0;
            let mut sum = CMatrix::zeros(sys.dim(), sys.dim());
            for &(s, q) in &pairing.pairs {
                conj = conj.max((&per[q] - per[s].map(|z| z.conj())).norm());
                sum += &per[s] + per[s].map(|z| z.conj());
            }
            for &k in pairing.zero.iter().chain(&pairing.pi) {
                sum += &per[k];
            }
            let shift = sys
                .blocks
                .iter()
                .enumerate()
                .map(|(k, _)| (block_projector(sys, &shifted[k].0, &shifted[k].1, p) - &per[k]).norm())
                .fold(0.0, f64::max);
            let decomposition = (bundle.projector_at_phase(p) - sum).norm();
            (conj, shift, decomposition)
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
    let shift_residual = (0..sys.blocks.len()).map(|k| shifted_chain_residual(sys, k)).fold(0.0, f64::max);
    ConjugationReport {
        conjugation,
        shift_residual,
        shift_projector,
        decomposition,
        passed: conjugation <= tol_proj && shift_projector <= tol_proj && decomposition <= tol_proj && shift_residual <= 1e-9,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::config::Tolerances;
    use crate::pencil::chain_system;
    use crate::propagator::{fundamental_matrix, IntegratorConfig};
    use std::sync::Arc;

    fn bundle(name: &str) -> (ProjectorBundle, bool) {
        let spec = bundled::load(name).unwrap().unwrap();
        let f = fundamental_matrix(&spec, &IntegratorConfig::default()).unwrap();
        let sys = chain_system(&f, &spec.strip, &Tolerances::default()).unwrap();
        (ProjectorBundle::new(Arc::new(sys)), spec.real)
    }

    fn eigs(b: &ProjectorBundle) -> Vec<PencilEigenvalue> {
        b.system.blocks.iter().map(|b| b.eig.clone()).collect()
    }

    #[test]
    fn renumbering_examples() {
        let (b, real) = bundle("e4");
        let p = renumber(&eigs(&b), real).unwrap();
        assert_eq!((p.sigma, p.epsilon0(), p.epsilon_sigma1()), (1, 0, 0));
        let (b, real) = bundle("e1");
        let p = renumber(&eigs(&b), real).unwrap();
        assert_eq!((p.sigma, p.epsilon0(), p.epsilon_sigma1()), (0, 1, 0));
        let (b, real) = bundle("e4_pi");
        let p = renumber(&eigs(&b), real).unwrap();
        assert_eq!((p.sigma, p.epsilon0(), p.epsilon_sigma1()), (0, 0, 1));
        assert!(matches!(renumber(&eigs(&b), false), Err(Error::NotReal(_))));
    }

    #[test]
    fn e4_rotation_block() {
        let (b, real) = bundle("e4");
        let p = renumber(&eigs(&b), real).unwrap();
        let r = real_projector(&b, &p).unwrap();
        let h = std::f64::consts::FRAC_PI_2;
        assert!((r.r_real[(0, 1)] - h).abs() < 1e-10);
        assert!((r.r_real[(1, 0)] + h).abs() < 1e-10);
        assert!(r.r_real[(0, 0)].abs() < 1e-10);
        let rep = verify_real_projector(&b, &r, 20, 3, 1e-9);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn e1_real_projector_is_constant() {
        let (b, real) = bundle("e1");
        let p = renumber(&eigs(&b), real).unwrap();
        let r = real_projector(&b, &p).unwrap();
        for i in [0, 17, 200] {
            let m = r.projector_at_phase(PHASE_SLOTS * i);
            let mut e = RMatrix::zeros(3, 3);
            e[(0, 0)] = 1.0;
            assert!((m - e).norm() < 1e-12);
        }
    }

    #[test]
    fn anti_periodic_and_jordan_cases() {
        for name in ["e4_pi", "e3", "mathieu", "e2"] {
            let (b, real) = bundle(name);
            let p = renumber(&eigs(&b), real).unwrap();
            let r = real_projector(&b, &p).unwrap();
            let rep = verify_real_projector(&b, &r, 20, 11, 1e-9);
            assert!(rep.passed, "{name}: {rep:?}");
            let c = verify_conjugation(&b, &p, 1e-9);
            assert!(c.passed, "{name}: {c:?}");
        }
    }

    #[test]
    fn real_system_matches_complex() {
        for name in ["e4", "e4_pi", "e3", "e1"] {
            let (b, real) = bundle(name);
            let p = renumber(&eigs(&b), real).unwrap();
            let r = real_projector(&b, &p).unwrap();
            let n = b.dim();
            let f = move |t: f64| DVector::from_fn(n, |i, _| ((i + 1) as f64 * t).sin() + 0.3);
            let w = Window::new(-1.5, 2.0, 256).unwrap();
            let xi = DVector::from_fn(r.dim(), |i, _| 0.5 - i as f64 * 0.25);
            let s = real_system_rhs(&b, &r, &f, &w, 0.5, &xi).unwrap();
            assert!(s.forcing_defect < 1e-10, "{name}: {}", s.forcing_defect);
            assert!(s.matrix_defect < 1e-10, "{name}: {}", s.matrix_defect);
            assert!(s.path_defect < 1e-10, "{name}: {}", s.path_defect);
        }
    }
}
