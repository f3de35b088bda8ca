//! Splitting `u = U + V` of solutions of `u' + A(t) u = f`: the finite
//! system for the coefficients of `U = P u`, the dichotomy Green operator
//! for `V = Q u`, the weighted window estimate, and expansions of
//! homogeneous solutions in the Floquet basis.

use std::sync::Arc;

use rayon::prelude::*;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::path::{sample_nodes, NodeSamples, SampledPath, Window};
use crate::pencil::{chain_system, NormalizedChainSystem};
use crate::problem::{ProblemSpec, StripSpec};
use crate::projector::{build_r, ProjectorBundle, ReducedMatrix};
use crate::propagator::{fundamental_matrix, step_defect, FundamentalSolution, IntegratorConfig, GAUSS_NODES, GAUSS_WEIGHTS};
use crate::{CMatrix, CVector, C64};

/// A forcing term evaluated at absolute time.
pub type Forcing<'a> = &'a (dyn Fn(f64) -> CVector + Sync);

/// Longest tail extension, in periods.
const MAX_EXTENSION_PERIODS: f64 = 200.0;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Floquet solutions `Phi^k_{j,m}(t) = e^{lambda_k t} sum_{n <= m} t^n / n! phi^k_{j,m-n}(t)`.
#[derive(Clone, Debug)]
pub struct PhiBasis {
    pub bundle: Arc<ProjectorBundle>,
}

impl PhiBasis {
    pub fn new(bundle: Arc<ProjectorBundle>) -> Self {
        Self { bundle }
    }

    fn system(&self) -> &NormalizedChainSystem {
        &self.bundle.system
    }

    /// `Phi^k_{j,m}(t)` with chain values taken from phase slot `p`, which
    /// must be the phase of `t`.
    pub fn at_phase(&self, k: usize, j: usize, m: usize, t: f64, p: usize) -> CVector {
        let b = &self.system().blocks[k];
        let mut v = CVector::zeros(self.system().dim());
        for n in 0..=m {
            v += b.chains.at_phase(j, m - n, p) * c(t.powi(n as i32) / factorial(n));
        }
        v * (b.lambda() * t).exp()
    }

    pub fn eval(&self, k: usize, j: usize, m: usize, t: f64) -> CVector {
        let b = &self.system().blocks[k];
        let mut v = CVector::zeros(self.system().dim());
        for n in 0..=m {
            v += b.chains.eval(j, m - n, t) * c(t.powi(n as i32) / factorial(n));
        }
        v * (b.lambda() * t).exp()
    }

    /// Difference between `e^{lambda (t - tau)} sum_n (t - tau)^n / n! phi_{m-n}(t)`
    /// and `e^{-lambda tau} sum_nu (-tau)^nu / nu! Phi_{m-nu}(t)`.
    pub fn shift_defect(&self, k: usize, j: usize, m: usize, t: f64, tau: f64) -> f64 {
        let b = &self.system().blocks[k];
        let lambda = b.lambda();
        let mut lhs = CVector::zeros(self.system().dim());
        for n in 0..=m {
            lhs += b.chains.eval(j, m - n, t) * c((t - tau).powi(n as i32) / factorial(n));
        }
        lhs *= (lambda * (t - tau)).exp();
        let mut rhs = CVector::zeros(self.system().dim());
        for nu in 0..=m {
            rhs += self.eval(k, j, m - nu, t) * c((-tau).powi(nu as i32) / factorial(nu));
        }
        rhs *= (-lambda * tau).exp();
        (lhs - rhs).norm()
    }

    /// Sampled `Phi^k_{j,m}` on a window.
    pub fn path(&self, k: usize, j: usize, m: usize, window: &Window) -> SampledPath {
        let values = (0..window.len())
            .map(|i| self.at_phase(k, j, m, window.time(i), window.phase(i)))
            .collect();
        SampledPath { window: *window, values }
    }

    /// `max ||L Phi|| / ||Phi||` over all basis members, by one-step defects
    /// on `window`.
    pub fn homogeneous_residual(&self, window: &Window, substeps: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for &(k, j, m) in &self.bundle.theta {
            let p = self.path(k, j, m, window);
            let scale = p.sup_norm().max(f64::MIN_POSITIVE);
            for i in 0..window.intervals {
                let d = step_defect(
                    &self.system().operator,
                    substeps,
                    window.time(i),
                    window.time(i + 1),
                    &p.values[i],
                    &p.values[i + 1],
                    None,
                );
                worst = worst.max(d / scale);
            }
        }
        worst
    }
}

/// Solves `u' - R u = f` on the window with `u(tau) = xi`, for forcing
/// values given at the Gauss nodes of every interval.
pub fn solve_finite_nodes(r: &ReducedMatrix, f: &NodeSamples, window: &Window, tau: f64, xi: &CVector) -> Result<SampledPath> {
    if xi.len() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial coefficient vector has length {}, expected {}",
            xi.len(),
            r.dim()
        )));
    }
    let i0 = window.index_of(tau).ok_or(Error::OffGrid { tau })?;
    let h = window.spacing();
    let step = r.exp(h);
    let back = r.exp(-h);
    let fwd_node: Vec<CMatrix> = GAUSS_NODES.iter().map(|q| r.exp((1.0 - q) * h)).collect();
    let back_node: Vec<CMatrix> = GAUSS_NODES.iter().map(|q| r.exp(-q * h)).collect();
    let mut values = vec![CVector::zeros(r.dim()); window.len()];
    values[i0] = xi.clone();
    for i in i0..window.intervals {
        let mut v = &step * &values[i];
        for q in 0..3 {
            v += &fwd_node[q] * &f[i][q] * c(h * GAUSS_WEIGHTS[q]);
        }
        values[i + 1] = v;
    }
    for i in (0..i0).rev() {
        let mut v = &back * &values[i + 1];
        for q in 0..3 {
            v -= &back_node[q] * &f[i][q] * c(h * GAUSS_WEIGHTS[q]);
        }
        values[i] = v;
    }
    SampledPath::new(*window, values)
}

/// Relative one-step defect of a coefficient path against RK4 integration
/// of `u' = R u + f`.
pub fn finite_residual(r: &ReducedMatrix, f: Forcing, path: &SampledPath, substeps: usize) -> f64 {
    let w = &path.window;
    let scale = path.sup_norm().max(1.0);
    (0..w.intervals)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (w.time(i), w.time(i + 1));
            let hs = (b - a) / substeps as f64;
            let mut u = path.values[i].clone();
            let g = |t: f64, x: &CVector, lo: f64, hi: f64| -> CVector {
                let delta = 1e-12 * t.abs().max(1.0);
                &r.matrix * x + f(t.clamp(lo + delta, hi - delta))
            };
            for s in 0..substeps {
                let t = a + s as f64 * hs;
                let e = t + hs;
                let k1 = g(t, &u, t, e);
                let k2 = g(t + 0.5 * hs, &(&u + &k1 * c(0.5 * hs)), t, e);
                let k3 = g(t + 0.5 * hs, &(&u + &k2 * c(0.5 * hs)), t, e);
                let k4 = g(e, &(&u + &k3 * c(hs)), t, e);
                u += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(hs / 6.0);
            }
            (u - &path.values[i + 1]).norm() / (b - a) / scale
        })
        .reduce(|| 0.0, f64::max)
}

/// `u(t) = e^{R (t - tau)} xi + int_tau^t e^{R (t - s)} f(s) ds` on the window,
/// with its one-step residual.
pub fn solve_finite(r: &ReducedMatrix, f: Forcing, window: &Window, tau: f64, xi: &CVector) -> Result<(SampledPath, f64)> {
    let nodes = sample_nodes(window, |_, _, t| f(t));
    let path = solve_finite_nodes(r, &nodes, window, tau, xi)?;
    let residual = finite_residual(r, f, &path, 16);
    Ok((path, residual))
}

/// Green operator of an exponential dichotomy of the monodromy: `Pi_-`
/// projects onto multipliers with `|mu| < r_-`, `Pi_+` onto `|mu| > r_+`.
#[derive(Clone, Debug)]
pub struct DichotomyGreen {
    fundamental: Arc<FundamentalSolution>,
    pub pi_minus: CMatrix,
    pub pi_plus: CMatrix,
    minus: Vec<CMatrix>,
    plus: Vec<CMatrix>,
    pub rank_minus: usize,
    pub rank_plus: usize,
    /// `-ln max |mu|` over `Pi_-` multipliers, per period.
    pub decay_minus: f64,
    /// `ln min |mu|` over `Pi_+` multipliers, per period.
    pub decay_plus: f64,
}

impl DichotomyGreen {
    pub fn with_radii(f: Arc<FundamentalSolution>, r_minus: f64, r_plus: f64) -> Result<Self> {
        let m = &f.monodromy;
        let schur = linalg::ordered_schur(m, |_| false);
        let spectrum: Vec<C64> = (0..m.nrows()).map(|i| schur.t[(i, i)]).collect();
        for mu in &spectrum {
            let a = mu.norm();
            if (a.ln() - r_minus.ln()).abs() < 1e-9 || (a.ln() - r_plus.ln()).abs() < 1e-9 {
                return Err(Error::StripBoundary {
                    lambda: format!("{}", crate::pencil::exponent(*mu)),
                    distance: (a.ln() - r_minus.ln()).abs().min((a.ln() - r_plus.ln()).abs()),
                });
            }
        }
        let pi_minus = linalg::spectral_projector(m, |z| z.norm() < r_minus);
        let pi_plus = linalg::spectral_projector(m, |z| z.norm() > r_plus);
        let rank_minus = spectrum.iter().filter(|z| z.norm() < r_minus).count();
        let rank_plus = spectrum.iter().filter(|z| z.norm() > r_plus).count();
        let decay_minus = spectrum
            .iter()
            .filter(|z| z.norm() < r_minus)
            .map(|z| -z.norm().ln())
            .fold(f64::INFINITY, f64::min);
        let decay_plus = spectrum
            .iter()
            .filter(|z| z.norm() > r_plus)
            .map(|z| z.norm().ln())
            .fold(f64::INFINITY, f64::min);
        for (name, p) in [("Pi_-", &pi_minus), ("Pi_+", &pi_plus)] {
            let norm = linalg::singular_values(p).first().copied().unwrap_or(0.0);
            if norm > 1e8 {
                return Err(Error::IllConditionedCluster {
                    lambda: name.into(),
                    condition: norm,
                });
            }
        }
        let phases = f.phase_count();
        let conj = |pi: &CMatrix| -> Vec<CMatrix> {
            (0..phases)
                .into_par_iter()
                .map(|p| f.u_at_phase(p) * pi * f.u_inv_at_phase(p))
                .collect()
        };
        let minus = conj(&pi_minus);
        let plus = conj(&pi_plus);
        Ok(Self {
            fundamental: f,
            pi_minus,
            pi_plus,
            minus,
            plus,
            rank_minus,
            rank_plus,
            decay_minus,
            decay_plus,
        })
    }

    pub fn minus_at_phase(&self, p: usize) -> &CMatrix {
        &self.minus[p]
    }

    pub fn plus_at_phase(&self, p: usize) -> &CMatrix {
        &self.plus[p]
    }

    pub fn fundamental(&self) -> &FundamentalSolution {
        &self.fundamental
    }

    /// `V(t) = int_{-inf}^t U(t,s) Pi_-(s) g(s) ds - int_t^inf U(t,s) Pi_+(s) g(s) ds`
    /// on the window, with `g` vanishing outside it.
    pub fn solve(&self, window: &Window, g: &NodeSamples) -> SampledPath {
        let k = self.fundamental.kernels();
        let n = self.fundamental.dim();
        let h = window.spacing();
        let len = window.len();
        let mut minus = vec![CVector::zeros(n); len];
        let mut plus = vec![CVector::zeros(n); len];
        if self.rank_minus > 0 {
            let mut v = CVector::zeros(n);
            for i in 0..window.intervals {
                let ip = window.interval_phase(i);
                v = &k.step[ip] * v;
                for q in 0..3 {
                    let pg = &self.minus[window.node_phase(i, q)] * &g[i][q];
                    v += &k.node_to_end[ip][q] * pg * c(h * GAUSS_WEIGHTS[q]);
                }
                v = &self.minus[window.phase(i + 1)] * v;
                minus[i + 1] = v.clone();
            }
        }
        if self.rank_plus > 0 {
            let mut v = CVector::zeros(n);
            for i in (0..window.intervals).rev() {
                let ip = window.interval_phase(i);
                v = &k.step_inv[ip] * v;
                for q in 0..3 {
                    let pg = &self.plus[window.node_phase(i, q)] * &g[i][q];
                    v -= &k.node_to_start[ip][q] * pg * c(h * GAUSS_WEIGHTS[q]);
                }
                v = &self.plus[window.phase(i)] * v;
                plus[i] = v.clone();
            }
        }
        SampledPath {
            window: *window,
            values: minus.into_iter().zip(plus).map(|(a, b)| a + b).collect(),
        }
    }

    /// Bound on the contribution of forcing beyond the window ends,
    /// from the forcing on the first and last interval.
    pub fn tail_estimate(&self, window: &Window, g: &NodeSamples) -> f64 {
        if g.is_empty() {
            return 0.0;
        }
        let first = g[0]
            .iter()
            .enumerate()
            .map(|(q, v)| (&self.minus[window.node_phase(0, q)] * v).norm())
            .fold(0.0, f64::max);
        let last_i = g.len() - 1;
        let last = g[last_i]
            .iter()
            .enumerate()
            .map(|(q, v)| (&self.plus[window.node_phase(last_i, q)] * v).norm())
            .fold(0.0, f64::max);
        let term = |b: f64, rho: f64| if b == 0.0 { 0.0 } else { b / rho.max(1e-3) };
        term(first, self.decay_minus) + term(last, self.decay_plus)
    }

    /// Periods of extension needed before and after a window so that
    /// truncated tails are damped below `tol`.
    pub fn extension_periods(&self, tol: f64) -> (f64, f64) {
        let periods = |rho: f64, rank: usize| {
            if rank == 0 || !rho.is_finite() || rho <= 0.0 {
                0.0
            } else {
                ((1.0 / tol).ln() / rho).min(MAX_EXTENSION_PERIODS)
            }
        };
        (periods(self.decay_minus, self.rank_minus), periods(self.decay_plus, self.rank_plus))
    }
}

/// Green operator for the remainder equation on the range of `Q`, with
/// `Pi_- + Pi_+ = Q(0)` checked.
pub fn dichotomy_green(
    f: Arc<FundamentalSolution>,
    bundle: &ProjectorBundle,
    strip: &StripSpec,
    tol: &Tolerances,
) -> Result<DichotomyGreen> {
    let g = DichotomyGreen::with_radii(f, strip.beta1.exp(), strip.beta2.exp())?;
    let n = bundle.dim();
    let q0 = CMatrix::identity(n, n) - bundle.projector_at_phase(0);
    let defect = (&g.pi_minus + &g.pi_plus - &q0).norm();
    let scale = q0.norm().max(1.0);
    if defect > tol.proj * scale * 10.0 {
        return Err(Error::Residual {
            what: "dichotomy splitting",
            residual: defect,
            tolerance: tol.proj * scale * 10.0,
        });
    }
    Ok(g)
}

/// `max ||L w - f|| / max(1, ||w||)` over the window by one-step defects.
pub fn remainder_residual(f: &FundamentalSolution, w: &SampledPath, forcing: Forcing) -> f64 {
    let win = &w.window;
    let scale = w.sup_norm().max(1.0);
    let substeps = f.config().substeps;
    (0..win.intervals)
        .into_par_iter()
        .map(|i| {
            step_defect(
                &f.operator,
                substeps,
                win.time(i),
                win.time(i + 1),
                &w.values[i],
                &w.values[i + 1],
                Some(forcing),
            ) / scale
        })
        .reduce(|| 0.0, f64::max)
}

/// Everything needed to split solutions for one problem and strip.
#[derive(Clone, Debug)]
pub struct SplitContext {
    pub spec: ProblemSpec,
    pub fundamental: Arc<FundamentalSolution>,
    pub bundle: Arc<ProjectorBundle>,
    pub green: DichotomyGreen,
    pub reduced: ReducedMatrix,
    pub tol: Tolerances,
}

impl SplitContext {
    pub fn new(spec: &ProblemSpec, cfg: &IntegratorConfig, tol: &Tolerances) -> Result<Self> {
        let fundamental = Arc::new(fundamental_matrix(spec, cfg)?);
        let system = chain_system(&fundamental, &spec.strip, tol)?;
        let bundle = Arc::new(ProjectorBundle::new(Arc::new(system)));
        let green = dichotomy_green(fundamental.clone(), &bundle, &spec.strip, tol)?;
        let reduced = build_r(&bundle);
        Ok(Self {
            spec: spec.clone(),
            fundamental,
            bundle,
            green,
            reduced,
            tol: *tol,
        })
    }

    pub fn phi_basis(&self) -> PhiBasis {
        PhiBasis::new(self.bundle.clone())
    }

    /// Coefficients `(f(s), psi(s))` at the Gauss nodes.
    pub fn coefficient_nodes(&self, window: &Window, f: Forcing) -> NodeSamples {
        sample_nodes(window, |i, q, t| self.bundle.coefficients_at_phase(window.node_phase(i, q), &f(t)))
    }

    /// `Q(s) f(s)` at the Gauss nodes.
    pub fn q_nodes(&self, window: &Window, f: Forcing) -> NodeSamples {
        sample_nodes(window, |i, q, t| self.bundle.apply_q_at_phase(window.node_phase(i, q), &f(t)))
    }

    /// `V` solving `L V = Q f` on `window`; the computation runs on a window
    /// extended far enough for the tails to be negligible.
    pub fn solve_remainder(&self, f: Forcing, window: &Window) -> Result<(SampledPath, f64)> {
        let (before, after) = self.green.extension_periods(0.01 * self.tol.rem);
        let nt = window.nt;
        let ext = window.extended((before * nt as f64).ceil() as usize, (after * nt as f64).ceil() as usize);
        let g = self.q_nodes(&ext, f);
        let tail = self.green.tail_estimate(&ext, &g);
        if tail > self.tol.rem {
            return Err(Error::TailTruncation {
                estimate: tail,
                tolerance: self.tol.rem,
            });
        }
        let v = self.green.solve(&ext, &g);
        let offset = (window.start - ext.start) as usize;
        let values = v.values[offset..offset + window.len()].to_vec();
        Ok((SampledPath::new(*window, values)?, tail))
    }

    /// Full splitting of the solution of `L u = f` with `P`-coefficients
    /// `xi` at `tau`.
    pub fn split(&self, f: Forcing, window: &Window, tau: f64, xi: &CVector) -> Result<SplitSolution> {
        let nodes = self.coefficient_nodes(window, f);
        let coefficients = solve_finite_nodes(&self.reduced, &nodes, window, tau, xi)?;
        let u_part = crate::projector::reconstruct(&self.bundle, &coefficients);
        let (v_part, tail) = self.solve_remainder(f, window)?;
        let total = SampledPath {
            window: *window,
            values: u_part.values.iter().zip(&v_part.values).map(|(a, b)| a + b).collect(),
        };
        let residual = remainder_residual(&self.fundamental, &total, f);
        if residual > 2.0 * self.tol.rem {
            return Err(Error::Residual {
                what: "splitting",
                residual,
                tolerance: 2.0 * self.tol.rem,
            });
        }
        Ok(SplitSolution {
            coefficients,
            u_part,
            v_part,
            residual,
            tail,
        })
    }

    /// The weight `mu(t)`: `e^{-beta2 t}` for `t >= 0`, `e^{-beta1 t}` for `t < 0`.
    pub fn weight(&self, t: f64) -> f64 {
        let s = &self.spec.strip;
        if t >= 0.0 {
            (-s.beta2 * t).exp()
        } else {
            (-s.beta1 * t).exp()
        }
    }

    /// Rows `(tau, ||V; X(tau, tau+1)||, int mu(t - tau) ||Q f; Y(t, t+1)|| dt, ratio)`
    /// for every `tau` in `taus`. `v` must cover `[tau, tau + 1]` and the
    /// forcing is treated as zero outside `v`'s window.
    pub fn estimate(&self, v: &SampledPath, f: Forcing, taus: &[f64]) -> Result<Vec<EstimateRow>> {
        let w = &v.window;
        let nt = w.nt;
        let h = w.spacing();
        let inner = &self.spec.inner;
        let g = self.q_nodes(w, f);
        // Squared Y-norm of Qf integrated over each interval.
        let cell: Vec<f64> = g
            .iter()
            .map(|nodes| {
                h * nodes
                    .iter()
                    .zip(GAUSS_WEIGHTS)
                    .map(|(x, wq)| wq * inner.norm_y(x).powi(2))
                    .sum::<f64>()
            })
            .collect();
        // ||Qf; Y(t_i, t_i + 1)|| at every grid point whose period fits.
        let mut prefix = vec![0.0; cell.len() + 1];
        for (i, x) in cell.iter().enumerate() {
            prefix[i + 1] = prefix[i] + x;
        }
        let sliding = |i: usize| -> f64 {
            let end = (i + nt).min(cell.len());
            (prefix[end] - prefix[i.min(cell.len())]).max(0.0).sqrt()
        };
        // X-integrand at grid points, derivative from the equation with the
        // right-hand limit of the forcing.
        let integrand: Vec<f64> = (0..w.len())
            .map(|i| {
                let t = w.time(i);
                let x = &v.values[i];
                let p = if i < w.intervals { w.phase(i) } else { w.phase(i) };
                let ft = f(t + 1e-12 * t.abs().max(1.0));
                let qf = self.bundle.apply_q_at_phase(p, &ft);
                let dv = qf - self.spec.operator.eval(t) * x;
                inner.norm_x(x).powi(2) + inner.norm_y(&dv).powi(2)
            })
            .collect();
        taus.iter()
            .map(|&tau| {
                let i0 = w.index_of(tau).ok_or(Error::OffGrid { tau })?;
                if i0 + nt > w.intervals {
                    return Err(Error::Config(format!("window does not cover [{tau}, {}]", tau + 1.0)));
                }
                let mut lhs = 0.0;
                for i in i0..i0 + nt {
                    lhs += 0.5 * h * (integrand[i] + integrand[i + 1]);
                }
                let lhs = lhs.sqrt();
                let mut rhs = 0.0;
                for i in 0..w.intervals {
                    let a = self.weight(w.time(i) - tau) * sliding(i);
                    let b = self.weight(w.time(i + 1) - tau) * sliding(i + 1);
                    rhs += 0.5 * h * (a + b);
                }
                let ratio = if rhs > 0.0 { lhs / rhs } else { f64::NAN };
                Ok(EstimateRow { tau, lhs, rhs, ratio })
            })
            .collect()
    }

    /// Coefficients of the two-weight difference `u_2 - u_1` in the Floquet
    /// basis at reference time `tau`, where `u_1` and `u_2` are the decaying
    /// solutions for the weights at `beta1` and `beta2`.
    pub fn asymptotic_difference(&self, f: Forcing, window: &Window, tau: f64) -> Result<AsymptoticExpansion> {
        let s = &self.spec.strip;
        let g1 = DichotomyGreen::with_radii(self.fundamental.clone(), s.beta1.exp(), s.beta1.exp())?;
        let g2 = DichotomyGreen::with_radii(self.fundamental.clone(), s.beta2.exp(), s.beta2.exp())?;
        let nodes = sample_nodes(window, |_, _, t| f(t));
        let u1 = g1.solve(window, &nodes);
        let u2 = g2.solve(window, &nodes);
        let difference = SampledPath {
            window: *window,
            values: u2.values.iter().zip(&u1.values).map(|(a, b)| a - b).collect(),
        };
        let expansion = self.expand(&difference, tau)?;
        if expansion.residual > self.tol.rem {
            return Err(Error::Residual {
                what: "asymptotic expansion",
                residual: expansion.residual,
                tolerance: self.tol.rem,
            });
        }
        Ok(AsymptoticExpansion {
            difference,
            u1,
            u2,
            ..expansion
        })
    }

    /// Coefficients of a homogeneous solution in the Floquet basis from its
    /// value at `tau`, with the reconstruction residual over the window.
    pub fn expand(&self, u: &SampledPath, tau: f64) -> Result<AsymptoticExpansion> {
        let w = &u.window;
        let i0 = w.index_of(tau).ok_or(Error::OffGrid { tau })?;
        let x = self.bundle.coefficients_at_phase(w.phase(i0), &u.values[i0]);
        let theta = &self.bundle.theta;
        let sys = &self.bundle.system;
        let mut coefficients = Vec::with_capacity(theta.len());
        for (a, &(k, j, m)) in theta.iter().enumerate() {
            let b = &sys.blocks[k];
            let len = b.chains.lengths[j];
            // x holds the pairing with psi_{j,m}, i.e. the phi_{j, len-1-m} coordinate.
            let coord = |r: usize| x[a - m + (len - 1 - r)];
            let mut cm = C64::new(0.0, 0.0);
            for mp in m..len {
                cm += coord(mp) * c((-tau).powi((mp - m) as i32) / factorial(mp - m));
            }
            coefficients.push(((k, j, m), cm * (-b.lambda() * tau).exp()));
        }
        let basis = self.phi_basis();
        let scale = u.sup_norm();
        let residual = (0..w.len())
            .into_par_iter()
            .map(|i| {
                let t = w.time(i);
                let p = w.phase(i);
                let mut r = u.values[i].clone();
                for &((k, j, m), cm) in &coefficients {
                    r -= basis.at_phase(k, j, m, t, p) * cm;
                }
                r.norm()
            })
            .reduce(|| 0.0, f64::max)
            / scale.max(f64::MIN_POSITIVE);
        Ok(AsymptoticExpansion {
            tau,
            coefficients,
            residual: if scale == 0.0 { 0.0 } else { residual },
            difference: u.clone(),
            u1: SampledPath::zeros(*w, u.dim()),
            u2: SampledPath::zeros(*w, u.dim()),
        })
    }

    /// Expansion of a homogeneous solution with growth inside the strip.
    /// Growth is checked by fitted exponential rates on the outer halves of
    /// the window: at most `beta2` forward and at least `beta1` backward.
    pub fn expand_bounded_solution(&self, u: &SampledPath, tau: f64) -> Result<AsymptoticExpansion> {
        let w = &u.window;
        let s = &self.spec.strip;
        let slack = 0.1 * (s.beta2 - s.beta1);
        let residual = remainder_residual(&self.fundamental, u, &|_| CVector::zeros(u.dim()));
        if residual > self.tol.rem {
            return Err(Error::Residual {
                what: "homogeneous equation",
                residual,
                tolerance: self.tol.rem,
            });
        }
        let fit = |lo: f64, hi: f64| -> Option<f64> {
            let pts: Vec<(f64, f64)> = (0..w.len())
                .map(|i| (w.time(i), u.values[i].norm()))
                .filter(|(t, n)| *t >= lo && *t <= hi && *n > 0.0)
                .map(|(t, n)| (t, n.ln()))
                .collect();
            if pts.len() < 2 {
                return None;
            }
            let k = pts.len() as f64;
            let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
            Some(sxy / sxx)
        };
        if w.t1() >= 2.0 {
            if let Some(rate) = fit(0.5 * w.t1(), w.t1()) {
                if rate > s.beta2 + slack {
                    return Err(Error::GrowthPrecondition(format!(
                        "forward growth rate {rate:.4} exceeds beta2 = {}",
                        s.beta2
                    )));
                }
            }
        }
        if w.t0() <= -2.0 {
            if let Some(rate) = fit(w.t0(), 0.5 * w.t0()) {
                if rate < s.beta1 - slack {
                    return Err(Error::GrowthPrecondition(format!(
                        "backward growth rate {rate:.4} is below beta1 = {}",
                        s.beta1
                    )));
                }
            }
        }
        let e = self.expand(u, tau)?;
        if e.residual > self.tol.rem {
            return Err(Error::Residual {
                what: "bounded solution expansion",
                residual: e.residual,
                tolerance: self.tol.rem,
            });
        }
        Ok(e)
    }
}

#[derive(Clone, Debug)]
pub struct SplitSolution {
    pub coefficients: SampledPath,
    pub u_part: SampledPath,
    pub v_part: SampledPath,
    /// `max ||L(U + V) - f||` relative one-step defect.
    pub residual: f64,
    pub tail: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EstimateRow {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, NaN when both sides vanish.
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct AsymptoticExpansion {
    pub tau: f64,
    /// `c^k_{j,m}` in lexicographic order.
    pub coefficients: Vec<((usize, usize, usize), C64)>,
    /// Relative reconstruction residual over the window.
    pub residual: f64,
    pub difference: SampledPath,
    pub u1: SampledPath,
    pub u2: SampledPath,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::format::parse_problem;

    fn ctx(text: &str) -> SplitContext {
        let spec = parse_problem(text).unwrap();
        SplitContext::new(&spec, &IntegratorConfig::default(), &Tolerances::default()).unwrap()
    }

    fn boxed(dim: usize, comp: usize, a: f64, b: f64) -> impl Fn(f64) -> CVector + Sync {
        move |t| {
            let mut v = CVector::zeros(dim);
            if t > a && t < b {
                v[comp] = C64::new(1.0, 0.0);
            }
            v
        }
    }

    #[test]
    fn scalar_remainder_closed_form() {
        let ctx = ctx("[space]\ndim = 1\n[operator]\nA = [[2]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n");
        assert_eq!(ctx.green.rank_minus, 1);
        let f = boxed(1, 0, 0.0, 1.0);
        let w = Window::new(-1.0, 3.0, 256).unwrap();
        let (v, _) = ctx.solve_remainder(&f, &w).unwrap();
        let exact = (-4.0f64).exp() * (2.0f64.exp() - 1.0) / 2.0;
        assert!((v.at(2.0).unwrap()[0].re - exact).abs() < 1e-12);
    }

    #[test]
    fn e1_asymptotic_coefficient() {
        let ctx = ctx(bundled::E1);
        let f = boxed(3, 0, 0.0, 1.0);
        let w = Window::new(-2.0, 3.0, 256).unwrap();
        let e = ctx.asymptotic_difference(&f, &w, 0.0).unwrap();
        assert_eq!(e.coefficients.len(), 1);
        assert!((e.coefficients[0].1 - C64::new(1.0, 0.0)).norm() < 1e-10);
        assert!(e.residual < 1e-9);
    }

    #[test]
    fn e3_finite_block() {
        let ctx = ctx(bundled::E3);
        let w = Window::new(0.0, 2.0, 256).unwrap();
        let zero = |_: f64| CVector::zeros(2);
        let xi = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let (u, res) = solve_finite(&ctx.reduced, &zero, &w, 0.5, &xi).unwrap();
        assert!(res < 1e-10);
        let end = u.at(2.0).unwrap();
        assert!((end[0] - C64::new(1.0, 0.0)).norm() < 1e-13);
        assert!((end[1] - C64::new(1.5, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn rela_identity() {
        let ctx = ctx(bundled::E3);
        let basis = ctx.phi_basis();
        assert!(basis.shift_defect(0, 0, 1, 0.8, 0.37) < 1e-10);
    }
}
