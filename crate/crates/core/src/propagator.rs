//! Fixed-step integration of `u' + A(t) u = f`, the fundamental solution on
//! one period, and per-interval propagators used by the Green operators.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{InnerProductPair, PeriodicMatrixFunction, ProblemSpec, TimeGrid};
use crate::{CMatrix, CVector};

/// Three-point Gauss-Legendre rule on `[0, 1]`.
pub const GAUSS_NODES: [f64; 3] = [0.5 - 0.387_298_334_620_741_7, 0.5, 0.5 + 0.387_298_334_620_741_7];
pub const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Sample slots per grid interval: the left grid point and the three Gauss
/// nodes.
pub const PHASE_SLOTS: usize = 4;

/// Time in `[0, 1)` of phase slot `p` on a grid with `nt` intervals.
pub fn phase_time(nt: usize, p: usize) -> f64 {
    let i = p / PHASE_SLOTS;
    let s = p % PHASE_SLOTS;
    let c = if s == 0 { 0.0 } else { GAUSS_NODES[s - 1] };
    (i as f64 + c) / nt as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Classical RK4 steps per grid interval.
    pub substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { substeps: 16 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegratorMetadata {
    pub method: &'static str,
    pub order: u32,
    pub substeps: usize,
    pub steps: usize,
    /// Richardson estimate `||M - M_coarse|| / 15`.
    pub local_error_estimate: f64,
}

/// Propagators attached to each grid interval `[t_i, t_{i+1}]` and its
/// Gauss nodes `s_q`.
#[derive(Clone, Debug)]
pub struct IntervalKernels {
    /// `Psi(t_{i+1}, t_i)`.
    pub step: Vec<CMatrix>,
    /// `Psi(t_i, t_{i+1})`.
    pub step_inv: Vec<CMatrix>,
    /// `Psi(t_{i+1}, s_q)`.
    pub node_to_end: Vec<[CMatrix; 3]>,
    /// `Psi(t_i, s_q)`.
    pub node_to_start: Vec<[CMatrix; 3]>,
    /// `U(s_q)` and its inverse.
    pub node_u: Vec<[CMatrix; 3]>,
    pub node_u_inv: Vec<[CMatrix; 3]>,
}

/// `U(t)` on the grid, `U' + A U = 0`, `U(0) = I`.
#[derive(Clone, Debug)]
pub struct FundamentalSolution {
    pub grid: TimeGrid,
    /// `U(t_i)` for `i = 0..=N_t`; the last entry is the monodromy.
    pub samples: Vec<CMatrix>,
    pub inverse_samples: Vec<CMatrix>,
    pub monodromy: CMatrix,
    pub metadata: IntegratorMetadata,
    pub operator: PeriodicMatrixFunction,
    pub inner: InnerProductPair,
    config: IntegratorConfig,
    kernels: Arc<OnceLock<Arc<IntervalKernels>>>,
}

fn rk4_matrix_step(x: &CMatrix, a0: &CMatrix, ah: &CMatrix, a1: &CMatrix, h: f64) -> CMatrix {
    let c = |v: f64| Complex64::new(v, 0.0);
    let k1 = -(a0 * x);
    let k2 = -(ah * (x + &k1 * c(0.5 * h)));
    let k3 = -(ah * (x + &k2 * c(0.5 * h)));
    let k4 = -(a1 * (x + &k3 * c(h)));
    x + (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(h / 6.0)
}

/// Propagator of the homogeneous system from `t0` to `t1` with `steps`
/// RK4 steps, evaluating `A` directly.
pub fn propagator_between(op: &PeriodicMatrixFunction, t0: f64, t1: f64, steps: usize) -> CMatrix {
    let n = op.dim();
    let mut x = CMatrix::identity(n, n);
    let h = (t1 - t0) / steps as f64;
    let mut a0 = op.eval(t0);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let ah = op.eval(t + 0.5 * h);
        let a1 = op.eval(if s + 1 == steps { t1 } else { t + h });
        x = rk4_matrix_step(&x, &a0, &ah, &a1, h);
        a0 = a1;
    }
    x
}

fn integrate_period(op: &PeriodicMatrixFunction, nt: usize, substeps: usize) -> Vec<CMatrix> {
    let n = op.dim();
    let count = 2 * nt * substeps;
    let a = op.samples(count);
    let h = 1.0 / (nt * substeps) as f64;
    let mut x = CMatrix::identity(n, n);
    let mut out = Vec::with_capacity(nt + 1);
    out.push(x.clone());
    for i in 0..nt {
        for s in 0..substeps {
            let k = 2 * (i * substeps + s);
            x = rk4_matrix_step(&x, &a[k], &a[k + 1], &a[(k + 2) % count], h);
        }
        out.push(x.clone());
    }
    out
}

/// `U(t)` on the problem grid and the monodromy `M = U(1)`.
pub fn fundamental_matrix(spec: &ProblemSpec, cfg: &IntegratorConfig) -> Result<FundamentalSolution> {
    cfg.validate()?;
    let nt = spec.grid.len();
    let samples = integrate_period(&spec.operator, nt, cfg.substeps);
    let monodromy = samples[nt].clone();
    let mut inverse_samples = Vec::with_capacity(nt + 1);
    for (i, u) in samples.iter().enumerate() {
        let t = i as f64 / nt as f64;
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::StepFailure {
                t,
                reason: "non-finite state".into(),
            });
        }
        let condition = linalg::condition_number(u);
        if !condition.is_finite() || condition > 1e14 {
            return Err(Error::SingularFundamental { t, condition });
        }
        inverse_samples.push(linalg::inverse(u).map_err(|_| Error::SingularFundamental {
            t,
            condition: f64::INFINITY,
        })?);
    }
    let coarse_steps = (cfg.substeps / 2).max(1);
    let local_error_estimate = if coarse_steps < cfg.substeps {
        let coarse = integrate_period(&spec.operator, nt, coarse_steps);
        (&coarse[nt] - &monodromy).norm() / 15.0
    } else {
        f64::NAN
    };
    Ok(FundamentalSolution {
        grid: spec.grid,
        samples,
        inverse_samples,
        monodromy,
        metadata: IntegratorMetadata {
            method: "rk4",
            order: 4,
            substeps: cfg.substeps,
            steps: nt * cfg.substeps,
            local_error_estimate,
        },
        operator: spec.operator.clone(),
        inner: spec.inner.clone(),
        config: *cfg,
        kernels: Arc::default(),
    })
}

/// Central difference weights of order eight for the first derivative.
const FD8: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

impl FundamentalSolution {
    pub fn dim(&self) -> usize {
        self.monodromy.nrows()
    }

    pub fn nt(&self) -> usize {
        self.grid.len()
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    /// `U(t_i + k)` for any integer grid index, via `U(t + 1) = U(t) M`.
    pub fn u_at_index(&self, idx: i64) -> CMatrix {
        let nt = self.nt() as i64;
        let period = idx.div_euclid(nt);
        let phase = idx.rem_euclid(nt) as usize;
        let mut u = self.samples[phase].clone();
        if period >= 0 {
            for _ in 0..period {
                u = &u * &self.monodromy;
            }
        } else {
            let m_inv = &self.inverse_samples[self.nt()];
            for _ in 0..(-period) {
                u = &u * m_inv;
            }
        }
        u
    }

    /// `max_i ||U'(t_i) + A(t_i) U(t_i)|| / max(1, ||U(t_i)||)` with
    /// eighth-order central differences.
    pub fn residual(&self) -> f64 {
        let nt = self.nt() as i64;
        let h = 1.0 / nt as f64;
        let mut worst: f64 = 0.0;
        for i in 0..nt {
            let mut du = CMatrix::zeros(self.dim(), self.dim());
            for (k, w) in FD8.iter().enumerate() {
                let k = k as i64 + 1;
                du += (self.u_at_index(i + k) - self.u_at_index(i - k)) * Complex64::new(*w / h, 0.0);
            }
            let u = &self.samples[i as usize];
            let a = self.operator.eval(i as f64 * h);
            let r = (du + a * u).norm() / u.norm().max(1.0);
            worst = worst.max(r);
        }
        worst
    }

    /// `|det M - exp(-int tr A)|` relative to the exact value.
    pub fn liouville_defect(&self) -> f64 {
        let det = self.monodromy.determinant();
        let exact = (-self.operator.mean_trace()).exp();
        (det - exact).norm() / exact.norm()
    }

    pub fn kernels(&self) -> Arc<IntervalKernels> {
        self.kernels.get_or_init(|| Arc::new(self.build_kernels())).clone()
    }

    fn build_kernels(&self) -> IntervalKernels {
        let nt = self.nt();
        let h = self.grid.spacing();
        let sub = self.config.substeps;
        let mut step = Vec::with_capacity(nt);
        let mut step_inv = Vec::with_capacity(nt);
        let mut node_to_end = Vec::with_capacity(nt);
        let mut node_to_start = Vec::with_capacity(nt);
        let mut node_u = Vec::with_capacity(nt);
        let mut node_u_inv = Vec::with_capacity(nt);
        for i in 0..nt {
            let t0 = i as f64 * h;
            let psi = propagator_between(&self.operator, t0, t0 + h, sub);
            let psi_inv = linalg::inverse(&psi).expect("short-time propagator is invertible");
            let mut to_end: [CMatrix; 3] = Default::default();
            let mut to_start: [CMatrix; 3] = Default::default();
            let mut nu: [CMatrix; 3] = Default::default();
            let mut nu_inv: [CMatrix; 3] = Default::default();
            for (q, c) in GAUSS_NODES.iter().enumerate() {
                let steps = ((sub as f64 * c).ceil() as usize).max(2);
                let fwd = propagator_between(&self.operator, t0, t0 + c * h, steps);
                let back = linalg::inverse(&fwd).expect("short-time propagator is invertible");
                to_end[q] = &psi * &back;
                nu[q] = &fwd * &self.samples[i];
                nu_inv[q] = &self.inverse_samples[i] * &back;
                to_start[q] = back;
            }
            step.push(psi);
            step_inv.push(psi_inv);
            node_to_end.push(to_end);
            node_to_start.push(to_start);
            node_u.push(nu);
            node_u_inv.push(nu_inv);
        }
        IntervalKernels {
            step,
            step_inv,
            node_to_end,
            node_to_start,
            node_u,
            node_u_inv,
        }
    }

    pub fn phase_count(&self) -> usize {
        PHASE_SLOTS * self.nt()
    }

    /// `U` at phase slot `p`.
    pub fn u_at_phase(&self, p: usize) -> CMatrix {
        let (i, s) = (p / PHASE_SLOTS, p % PHASE_SLOTS);
        if s == 0 {
            self.samples[i].clone()
        } else {
            self.kernels().node_u[i][s - 1].clone()
        }
    }

    pub fn u_inv_at_phase(&self, p: usize) -> CMatrix {
        let (i, s) = (p / PHASE_SLOTS, p % PHASE_SLOTS);
        if s == 0 {
            self.inverse_samples[i].clone()
        } else {
            self.kernels().node_u_inv[i][s - 1].clone()
        }
    }

    /// Adjoint fundamental solution `U_a(t) = G^{-1} U(t)^{-H} G`.
    pub fn adjoint_sample(&self, i: usize) -> CMatrix {
        let g = self.inner.gram_y_complex();
        let g_inv = self.inner.gram_y_inv_complex();
        g_inv * self.inverse_samples[i].adjoint() * g
    }

    pub fn adjoint_monodromy(&self) -> CMatrix {
        self.adjoint_sample(self.nt())
    }
}

/// A sampled trajectory.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&CVector> {
        self.states.last()
    }
}

/// Offset that keeps forcing evaluations strictly inside a step, so
/// piecewise forcings are integrated on the correct side of their jumps.
fn nudge(t: f64, a: f64, b: f64) -> f64 {
    let delta = 1e-12 * t.abs().max(1.0);
    t.clamp(a + delta, b - delta)
}

/// One RK4 step for `u' = -A(t) u + f(t)` on `[a, b]`.
fn rk4_vector_step(op: &PeriodicMatrixFunction, a: f64, b: f64, u: &CVector, forcing: Option<&dyn Fn(f64) -> CVector>) -> CVector {
    let h = b - a;
    let mid = a + 0.5 * h;
    let f = |t: f64, x: &CVector| -> CVector {
        let mut r = -(op.eval(t) * x);
        if let Some(g) = forcing {
            r += g(nudge(t, a, b));
        }
        r
    };
    let k1 = f(a, u);
    let k2 = f(mid, &(u + &k1 * Complex64::new(0.5 * h, 0.0)));
    let k3 = f(mid, &(u + &k2 * Complex64::new(0.5 * h, 0.0)));
    let k4 = f(b, &(u + &k3 * Complex64::new(h, 0.0)));
    u + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4) * Complex64::new(h / 6.0, 0.0)
}

/// Integrates `u' + A(t) u = f(t)` from `t0` to `t1`. Samples are returned
/// every `substeps` steps, which lands on grid points for grid-aligned
/// endpoints.
pub fn propagate(
    spec: &ProblemSpec,
    cfg: &IntegratorConfig,
    t0: f64,
    t1: f64,
    u0: &CVector,
    forcing: Option<&dyn Fn(f64) -> CVector>,
) -> Result<Trajectory> {
    if !(t0 < t1) {
        return Err(Error::Config(format!("propagate requires t0 < t1, got {t0} >= {t1}")));
    }
    if u0.len() != spec.dimension {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, expected {}",
            u0.len(),
            spec.dimension
        )));
    }
    cfg.validate()?;
    let nt = spec.grid.len();
    let intervals = (((t1 - t0) * nt as f64) - 1e-9).ceil().max(1.0) as usize;
    let steps = intervals * cfg.substeps;
    let h = (t1 - t0) / steps as f64;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![u0.clone()],
    };
    let mut u = u0.clone();
    for s in 0..steps {
        let a = t0 + s as f64 * h;
        let b = if s + 1 == steps { t1 } else { a + h };
        u = rk4_vector_step(&spec.operator, a, b, &u, forcing);
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::StepFailure {
                t: b,
                reason: "non-finite state".into(),
            });
        }
        if (s + 1) % cfg.substeps == 0 {
            traj.times.push(b);
            traj.states.push(u.clone());
        }
    }
    Ok(traj)
}

/// Integrates an autonomous-in-structure right-hand side `u' = g(t, u)` with
/// RK4, used for nonlinear full-system runs.
pub fn integrate_rhs(g: &dyn Fn(f64, &CVector) -> CVector, t0: f64, t1: f64, steps: usize, u0: &CVector) -> Trajectory {
    let h = (t1 - t0) / steps as f64;
    let hc = |x: f64| Complex64::new(x, 0.0);
    let mut u = u0.clone();
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![u0.clone()],
    };
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = g(t, &u);
        let k2 = g(t + 0.5 * h, &(&u + &k1 * hc(0.5 * h)));
        let k3 = g(t + 0.5 * h, &(&u + &k2 * hc(0.5 * h)));
        let k4 = g(t + h, &(&u + &k3 * hc(h)));
        u += (k1 + k2 * hc(2.0) + k3 * hc(2.0) + k4) * hc(h / 6.0);
        traj.times.push(t + h);
        traj.states.push(u.clone());
    }
    traj
}

/// Relative one-step defect of a computed path against an independent RK4
/// integration over `[a, b]`, divided by the step length.
pub fn step_defect(
    op: &PeriodicMatrixFunction,
    substeps: usize,
    a: f64,
    b: f64,
    ua: &CVector,
    ub: &CVector,
    forcing: Option<&dyn Fn(f64) -> CVector>,
) -> f64 {
    let h = (b - a) / substeps as f64;
    let mut u = ua.clone();
    for s in 0..substeps {
        let t = a + s as f64 * h;
        let e = if s + 1 == substeps { b } else { t + h };
        u = rk4_vector_step(op, t, e, &u, forcing);
    }
    (u - ub).norm() / (b - a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::parse_problem;

    fn spec(text: &str) -> ProblemSpec {
        parse_problem(text).unwrap()
    }

    #[test]
    fn diagonal_monodromy() {
        let s = spec("[space]\ndim = 3\n[operator]\nA = [[0,0,0],[0,2,0],[0,0,-2]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n");
        let f = fundamental_matrix(&s, &IntegratorConfig::default()).unwrap();
        let m = &f.monodromy;
        assert!((m[(0, 0)].re - 1.0).abs() < 1e-13);
        assert!((m[(1, 1)].re - (-2.0f64).exp()).abs() < 1e-11);
        assert!((m[(2, 2)].re - 2.0f64.exp()).abs() < 1e-10);
        assert!(f.liouville_defect() < 1e-8);
    }

    #[test]
    fn jordan_monodromy() {
        let s = spec("[space]\ndim = 2\n[operator]\nA = [[0, 1 + cos(2*pi*t)], [0, 0]]\n[strip]\nbeta1 = -1/2\nbeta2 = 1/2\n");
        let f = fundamental_matrix(&s, &IntegratorConfig::default()).unwrap();
        let m = &f.monodromy;
        assert!((m[(0, 1)].re + 1.0).abs() < 1e-13);
        assert!(f.residual() < 1e-7);
    }

    #[test]
    fn forced_constant_growth() {
        let s = spec("[space]\ndim = 1\n[operator]\nA = [[0]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n");
        let c = CVector::from_element(1, Complex64::new(2.0, 0.0));
        let forcing = |_t: f64| c.clone();
        let u0 = CVector::from_element(1, Complex64::new(1.0, 0.0));
        let traj = propagate(&s, &IntegratorConfig::default(), 0.0, 1.5, &u0, Some(&forcing)).unwrap();
        let end = traj.last().unwrap();
        assert!((end[0].re - 4.0).abs() < 1e-12);
    }
}
