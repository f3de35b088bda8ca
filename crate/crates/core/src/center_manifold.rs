//! Center manifold reduction: cutoff nonlinearity, weighted norms, the
//! linear solution operator, the fixed point defining `h(tau, mu, xi)`, and
//! the reduced system with its invariance and capture checks.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;

use serde::Serialize;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::path::{NodeSamples, SampledPath, Window};
use crate::problem::{FrozenAtTime, InnerProductPair, NonlinearTerm, ProblemSpec};
use crate::projector::ProjectorBundle;
use crate::propagator::{integrate_rhs, GAUSS_WEIGHTS, PHASE_SLOTS};
use crate::splitting::{solve_finite_nodes, SplitContext};
use crate::{CMatrix, CVector, C64};

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Polynomial smoothstep with `order` continuous derivatives at both ends:
/// 0 for `x <= 0`, 1 for `x >= 1`.
pub fn smoothstep(order: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let n = order as u64;
    let mut s = 0.0;
    for k in 0..=n {
        s += binomial(n + k, k) * binomial(2 * n + 1, n - k) * (-x).powi(k as i32);
    }
    s * x.powi(order as i32 + 1)
}

/// Cutoff `chi` with `chi = 1` on `[0, 1]` and `chi = 0` on `[2, inf)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CutoffConfig {
    pub epsilon: f64,
    /// Number of continuous derivatives of `chi`.
    pub order: u32,
}

impl CutoffConfig {
    pub fn new(epsilon: f64, smoothness: u32) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            order: smoothness + 1,
        })
    }

    pub fn chi(&self, r: f64) -> f64 {
        1.0 - smoothstep(self.order, r - 1.0)
    }

    /// `chi(|u| / eps) chi(|V|_X / eps)`.
    pub fn factor(&self, u_norm: f64, v_norm: f64) -> f64 {
        self.chi(u_norm / self.epsilon) * self.chi(v_norm / self.epsilon)
    }
}

/// `f_eps = chi chi f(t, mu, U + V)` and its coefficients `(f_eps, psi)`.
#[allow(clippy::too_many_arguments)]
pub fn cutoff_rhs(
    bundle: &ProjectorBundle,
    f: &NonlinearTerm,
    cutoff: &CutoffConfig,
    inner: &InnerProductPair,
    t: f64,
    mu: &[f64],
    u: &CVector,
    v: &CVector,
) -> (CVector, CVector) {
    let state = bundle.combine_at(t, u) + v;
    let value = f.eval(t, mu, &state) * c(cutoff.factor(u.norm(), inner.norm_x(v)));
    let coeffs = bundle.coefficients_at(t, &value);
    (value, coeffs)
}

/// The four weighted norms of a path, with weight `e^{-gamma |t - tau|}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WeightedNorms {
    /// Euclidean norm of values and derivative.
    pub h1: f64,
    /// Euclidean norm of values.
    pub l2: f64,
    /// `X` norm of values and `Y` norm of the derivative.
    pub x: f64,
    /// `Y` norm of values.
    pub y: f64,
}

/// Trapezoid quadrature of the weighted integrands; derivatives by central
/// differences.
pub fn weighted_norms(path: &SampledPath, tau: f64, gamma: f64, inner: &InnerProductPair) -> WeightedNorms {
    let w = &path.window;
    let h = w.spacing();
    let len = w.len();
    if len < 2 {
        return WeightedNorms::default();
    }
    let deriv = |i: usize| -> CVector {
        let v = &path.values;
        if i == 0 {
            (&v[1] - &v[0]) * c(1.0 / h)
        } else if i + 1 == len {
            (&v[i] - &v[i - 1]) * c(1.0 / h)
        } else {
            (&v[i + 1] - &v[i - 1]) * c(0.5 / h)
        }
    };
    let mut acc = [0.0; 4];
    for i in 0..len {
        let t = w.time(i);
        let weight = (-2.0 * gamma * (t - tau).abs()).exp() * if i == 0 || i + 1 == len { 0.5 * h } else { h };
        let v = &path.values[i];
        let d = deriv(i);
        acc[0] += weight * (v.norm_squared() + d.norm_squared());
        acc[1] += weight * v.norm_squared();
        acc[2] += weight * (inner.norm_x(v).powi(2) + inner.norm_y(&d).powi(2));
        acc[3] += weight * inner.norm_y(v).powi(2);
    }
    WeightedNorms {
        h1: acc[0].sqrt(),
        l2: acc[1].sqrt(),
        x: acc[2].sqrt(),
        y: acc[3].sqrt(),
    }
}

fn weighted_node_norm(nodes: &NodeSamples, window: &Window, tau: f64, gamma: f64, norm: impl Fn(&CVector) -> f64) -> f64 {
    let h = window.spacing();
    let mut acc = 0.0;
    for (i, qs) in nodes.iter().enumerate() {
        for (q, v) in qs.iter().enumerate() {
            let t = window.node_time(i, q);
            acc += h * GAUSS_WEIGHTS[q] * (-2.0 * gamma * (t - tau).abs()).exp() * norm(v).powi(2);
        }
    }
    acc.sqrt()
}

/// Solution of the linear model problem with the ratios of its weighted
/// norms to the data.
#[derive(Clone, Debug)]
pub struct ModelSolution {
    pub u: SampledPath,
    pub v: SampledPath,
    /// `|u|_{H1} / (|xi| + |F|_{L2})`.
    pub u_ratio: f64,
    /// `|V|_X / |G|_Y`, NaN for vanishing `G`.
    pub v_ratio: f64,
}

/// `u' - R u = F` with `u(tau) = xi`, and `V = K G` from the dichotomy Green
/// operator; `G` must lie in the range of `Q`.
pub fn model_solve(
    ctx: &SplitContext,
    f: &NodeSamples,
    xi: &CVector,
    g: &NodeSamples,
    window: &Window,
    tau: f64,
    gamma: f64,
) -> Result<ModelSolution> {
    let u = solve_finite_nodes(&ctx.reduced, f, window, tau, xi)?;
    let v = ctx.green.solve(window, g);
    let inner = &ctx.spec.inner;
    let nu = weighted_norms(&u, tau, gamma, inner);
    let nv = weighted_norms(&v, tau, gamma, inner);
    let fl2 = weighted_node_norm(f, window, tau, gamma, |x| x.norm());
    let gy = weighted_node_norm(g, window, tau, gamma, |x| inner.norm_y(x));
    let denom = xi.norm() + fl2;
    Ok(ModelSolution {
        u_ratio: if denom > 0.0 { nu.h1 / denom } else { 0.0 },
        v_ratio: if gy > 0.0 { nv.x / gy } else { f64::NAN },
        u,
        v,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ManifoldConfig {
    pub epsilon: f64,
    /// Weight exponent; `None` selects half the strip margin.
    pub gamma: Option<f64>,
    pub max_iter: usize,
    /// Step of the reduced RK4 integrator, a multiple of two grid spacings.
    pub reduced_step: f64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            gamma: None,
            max_iter: 60,
            reduced_step: 0.125,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FixedPointDiagnostics {
    pub iterations: usize,
    /// Ratios of successive weighted differences.
    pub factors: Vec<f64>,
    /// Largest ratio while the difference was above round-off.
    pub contraction: f64,
    pub difference: f64,
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub tau: f64,
    pub u: SampledPath,
    pub v: SampledPath,
    pub diagnostics: FixedPointDiagnostics,
}

impl FixedPoint {
    pub fn h(&self) -> CVector {
        self.v.at(self.tau).expect("tau lies on the window").clone()
    }
}

/// Nonlinearity and linear correction frozen at every phase for one `mu`.
#[derive(Debug)]
struct Frozen {
    mu: Vec<f64>,
    f: Vec<FrozenAtTime>,
    /// `A(t, mu) - A(t, mu0)`, moved to the right side.
    delta_a: Option<Vec<CMatrix>>,
}

type CacheKey = (i64, Vec<i64>, Vec<i64>);

/// `h(tau, mu, xi) = V(tau)` from the fixed point, with caching.
#[derive(Debug)]
pub struct ManifoldMap {
    pub ctx: Arc<SplitContext>,
    pub cutoff: CutoffConfig,
    pub gamma: f64,
    /// Strip margin bounding `gamma`.
    pub beta: f64,
    pub cfg: ManifoldConfig,
    pub tol: Tolerances,
    /// Window extent before and after `tau`, in grid intervals.
    pub before: usize,
    pub after: usize,
    nonlinearity: NonlinearTerm,
    frozen: Mutex<Vec<Arc<Frozen>>>,
    cache: Mutex<HashMap<CacheKey, (CVector, f64)>>,
}

fn quantize(x: f64) -> i64 {
    (x * 1e13).round() as i64
}

impl ManifoldMap {
    pub fn new(ctx: Arc<SplitContext>, cfg: ManifoldConfig) -> Result<Self> {
        let spec = &ctx.spec;
        let nonlinearity = spec.nonlinearity.clone().ok_or(Error::MissingNonlinearity)?;
        let cutoff = CutoffConfig::new(cfg.epsilon, spec.smoothness)?;
        let beta = (-spec.strip.beta1).min(spec.strip.beta2);
        if beta <= 0.0 {
            return Err(Error::Config("the strip must contain the imaginary axis".into()));
        }
        let gamma = cfg.gamma.unwrap_or(0.5 * beta);
        if !(gamma > 0.0 && gamma <= beta) {
            return Err(Error::Config(format!("gamma must lie in (0, {beta}], got {gamma}")));
        }
        let nt = ctx.fundamental.nt();
        let step_ticks = cfg.reduced_step * nt as f64;
        if cfg.reduced_step <= 0.0 || (step_ticks - step_ticks.round()).abs() > 1e-9 || step_ticks.round() as usize % 2 != 0 {
            return Err(Error::Config(format!(
                "reduced step {} must be an even number of grid spacings",
                cfg.reduced_step
            )));
        }
        if cfg.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        let tol = ctx.tol;
        let (before, after) = ctx.green.extension_periods(0.01 * tol.fp);
        let before = ((before * nt as f64).ceil() as usize).max(4);
        let after = (after * nt as f64).ceil() as usize;
        Ok(Self {
            cutoff,
            gamma,
            beta,
            cfg,
            tol,
            before,
            after,
            nonlinearity,
            frozen: Mutex::new(Vec::new()),
            cache: Mutex::new(HashMap::new()),
            ctx,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.ctx.spec
    }

    pub fn nt(&self) -> usize {
        self.ctx.fundamental.nt()
    }

    /// Number of reduced coordinates.
    pub fn dim(&self) -> usize {
        self.ctx.bundle.total()
    }

    pub fn mu0(&self) -> Vec<f64> {
        self.ctx.spec.mu.clone()
    }

    fn frozen(&self, mu: &[f64]) -> Result<Arc<Frozen>> {
        if let Some(f) = self.frozen.lock().iter().find(|f| f.mu == mu) {
            return Ok(f.clone());
        }
        let spec = self.spec();
        if mu.len() != spec.parameters.dim() {
            return Err(Error::ParameterOutOfRange(format!(
                "expected {} parameters, got {}",
                spec.parameters.dim(),
                mu.len()
            )));
        }
        if !spec.parameters.contains(mu) {
            return Err(Error::ParameterOutOfRange(format!("{mu:?}")));
        }
        let nt = self.nt();
        let phases = PHASE_SLOTS * nt;
        let frozen = self.nonlinearity.freeze(mu);
        let times: Vec<f64> = (0..phases).map(|p| crate::propagator::phase_time(nt, p)).collect();
        let f = times.iter().map(|&t| frozen.at_time(t)).collect();
        let delta_a = if spec.operator_depends_on_mu() && mu != spec.mu.as_slice() {
            let other = spec.at_parameter(mu)?;
            Some(times.iter().map(|&t| other.operator.eval(t) - spec.operator.eval(t)).collect())
        } else {
            None
        };
        let out = Arc::new(Frozen {
            mu: mu.to_vec(),
            f,
            delta_a,
        });
        self.frozen.lock().push(out.clone());
        Ok(out)
    }

    /// The window `[tau - before, tau + after]`; `tau` must be a grid point.
    pub fn window(&self, tau: f64) -> Result<Window> {
        let nt = self.nt();
        let at = Window::new(tau, tau + 1.0, nt).map_err(|_| Error::OffGrid { tau })?;
        Ok(Window {
            start: at.start - self.before as i64,
            intervals: self.before + self.after,
            nt,
        })
    }

    /// `f_eps(t, mu, U + V)` split into coefficients and the `Q` part at the
    /// Gauss nodes.
    fn forcing(&self, frozen: &Frozen, u: &SampledPath, v: &SampledPath) -> (NodeSamples, NodeSamples) {
        let w = &u.window;
        let bundle = &self.ctx.bundle;
        let inner = &self.ctx.spec.inner;
        let mut fc = Vec::with_capacity(w.intervals);
        let mut gq = Vec::with_capacity(w.intervals);
        for i in 0..w.intervals {
            let un = u.at_nodes(i);
            let vn = v.at_nodes(i);
            let mut fi: [CVector; 3] = Default::default();
            let mut gi: [CVector; 3] = Default::default();
            for q in 0..3 {
                let p = w.node_phase(i, q);
                let state = bundle.combine_at_phase(p, &un[q]) + &vn[q];
                let mut value = frozen.f[p].eval(&state);
                if let Some(da) = &frozen.delta_a {
                    value -= &da[p] * &state;
                }
                value *= c(self.cutoff.factor(un[q].norm(), inner.norm_x(&vn[q])));
                let coeffs = bundle.coefficients_at_phase(p, &value);
                gi[q] = value - bundle.combine_at_phase(p, &coeffs);
                fi[q] = coeffs;
            }
            fc.push(fi);
            gq.push(gi);
        }
        (fc, gq)
    }

    fn difference(&self, a: (&SampledPath, &SampledPath), b: (&SampledPath, &SampledPath), tau: f64) -> f64 {
        let w = &a.0.window;
        let inner = &self.ctx.spec.inner;
        let h = w.spacing();
        let mut acc = 0.0;
        for i in 0..w.len() {
            let t = w.time(i);
            let weight = (-2.0 * self.gamma * (t - tau).abs()).exp() * if i == 0 || i + 1 == w.len() { 0.5 * h } else { h };
            let du = (&a.0.values[i] - &b.0.values[i]).norm_squared();
            let dv = inner.norm_x(&(&a.1.values[i] - &b.1.values[i])).powi(2);
            acc += weight * (du + dv);
        }
        acc.sqrt()
    }

    /// Fixed point of `(u, V) -> K(F_eps(u, V), xi, Q f_eps(u, V))`.
    pub fn fixed_point(&self, tau: f64, mu: &[f64], xi: &CVector) -> Result<FixedPoint> {
        self.fixed_point_from(tau, mu, xi, None)
    }

    /// As `fixed_point`, starting from a previous solution whose window is
    /// shifted onto the new one.
    pub fn fixed_point_from(&self, tau: f64, mu: &[f64], xi: &CVector, guess: Option<&FixedPoint>) -> Result<FixedPoint> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "xi has length {}, expected {}",
                xi.len(),
                self.dim()
            )));
        }
        let frozen = self.frozen(mu)?;
        let window = self.window(tau)?;
        let n = self.ctx.bundle.dim();
        let zero_nodes = |dim: usize| -> NodeSamples {
            (0..window.intervals)
                .map(|_| std::array::from_fn(|_| CVector::zeros(dim)))
                .collect()
        };
        let (mut u, mut v) = match guess {
            Some(g) => (shift_path(&g.u, &window), shift_path(&g.v, &window)),
            None => (
                solve_finite_nodes(&self.ctx.reduced, &zero_nodes(self.dim()), &window, tau, xi)?,
                SampledPath::zeros(window, n),
            ),
        };
        if guess.is_some() {
            // Pin the coefficient path to the new initial value.
            let (fc, _) = self.forcing(&frozen, &u, &v);
            u = solve_finite_nodes(&self.ctx.reduced, &fc, &window, tau, xi)?;
        }
        let mut diag = FixedPointDiagnostics::default();
        let mut previous: Option<f64> = None;
        let mut streak = 0;
        let floor = 1e3 * self.tol.fp.max(f64::EPSILON);
        loop {
            let (fc, gq) = self.forcing(&frozen, &u, &v);
            let u_new = solve_finite_nodes(&self.ctx.reduced, &fc, &window, tau, xi)?;
            let v_new = self.ctx.green.solve(&window, &gq);
            let d = self.difference((&u_new, &v_new), (&u, &v), tau);
            diag.iterations += 1;
            u = u_new;
            v = v_new;
            if let Some(prev) = previous {
                if prev > 0.0 {
                    let factor = d / prev;
                    diag.factors.push(factor);
                    if prev > floor {
                        diag.contraction = diag.contraction.max(factor);
                    }
                    if factor >= 1.0 && d > self.tol.fp {
                        streak += 1;
                        if streak >= 5 {
                            return Err(Error::NonContraction {
                                factor,
                                iterations: diag.iterations,
                            });
                        }
                    } else {
                        streak = 0;
                    }
                }
            }
            diag.difference = d;
            if d <= self.tol.fp {
                break;
            }
            if diag.iterations >= self.cfg.max_iter {
                return Err(Error::MaxIterations {
                    iterations: diag.iterations,
                    difference: d,
                });
            }
            previous = Some(d);
        }
        if diag.contraction == 0.0 {
            diag.contraction = diag.factors.last().copied().unwrap_or(0.0);
        }
        Ok(FixedPoint {
            tau,
            u,
            v,
            diagnostics: diag,
        })
    }

    fn key(&self, tau: f64, mu: &[f64], xi: &CVector) -> CacheKey {
        let nt = self.nt() as i64;
        let phase = ((tau * nt as f64).round() as i64).rem_euclid(nt);
        let mut x = Vec::with_capacity(2 * xi.len());
        for z in xi.iter() {
            x.push(quantize(z.re));
            x.push(quantize(z.im));
        }
        (phase, mu.iter().map(|&m| quantize(m)).collect(), x)
    }

    /// `h(tau, mu, xi)`, cached by phase of `tau`, `mu` and `xi`.
    pub fn value(&self, tau: f64, mu: &[f64], xi: &CVector) -> Result<CVector> {
        Ok(self.value_with_factor(tau, mu, xi)?.0)
    }

    /// `h` and the contraction factor of its fixed point solve.
    pub fn value_with_factor(&self, tau: f64, mu: &[f64], xi: &CVector) -> Result<(CVector, f64)> {
        self.window(tau)?;
        let key = self.key(tau, mu, xi);
        if let Some(hit) = self.cache.lock().get(&key) {
            return Ok(hit.clone());
        }
        let fp = self.fixed_point(tau, mu, xi)?;
        let out = (fp.h(), fp.diagnostics.contraction);
        self.cache.lock().insert(key, out.clone());
        Ok(out)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().len()
    }

    /// `U(tau) xi + h(tau, mu, xi)`.
    pub fn lift(&self, tau: f64, mu: &[f64], xi: &CVector) -> Result<CVector> {
        let h = self.value(tau, mu, xi)?;
        Ok(self.ctx.bundle.combine_at(tau, xi) + h)
    }

    /// Central finite-difference Jacobian of `h` in `xi` at zero; columns
    /// for the real then imaginary direction of every coordinate.
    pub fn jacobian_at_zero(&self, tau: f64, mu: &[f64]) -> Result<CMatrix> {
        let m = self.dim();
        let n = self.ctx.bundle.dim();
        let step = 1e-4 * self.cutoff.epsilon;
        let mut out = CMatrix::zeros(n, 2 * m);
        for a in 0..m {
            for (b, dir) in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)].into_iter().enumerate() {
                let mut xi = CVector::zeros(m);
                xi[a] = dir * step;
                let plus = self.fixed_point(tau, mu, &xi)?.h();
                xi[a] = -dir * step;
                let minus = self.fixed_point(tau, mu, &xi)?.h();
                out.set_column(2 * a + b, &((plus - minus) * c(0.5 / step)));
            }
        }
        Ok(out)
    }

    /// Right side `R xi + (f_eps(t, mu, U xi + h), psi)` of the reduced system
    /// at a grid time, with the lifted state.
    pub fn reduced_rhs(&self, t: f64, mu: &[f64], xi: &CVector, guess: Option<&FixedPoint>) -> Result<(CVector, CVector, FixedPoint)> {
        let fp = self.fixed_point_from(t, mu, xi, guess)?;
        let h = fp.h();
        let bundle = &self.ctx.bundle;
        let state = bundle.combine_at(t, xi) + &h;
        let f = self.forcing_at(t, mu, xi, &h, &state)?;
        let rhs = &self.ctx.reduced.matrix * xi + bundle.coefficients_at(t, &f);
        Ok((rhs, state, fp))
    }

    fn forcing_at(&self, t: f64, mu: &[f64], xi: &CVector, h: &CVector, state: &CVector) -> Result<CVector> {
        let mut f = self.nonlinearity.eval(t, mu, state);
        if let Some(da) = &self.frozen(mu)?.delta_a {
            let nt = self.nt();
            let p = PHASE_SLOTS * ((t * nt as f64).round() as i64).rem_euclid(nt as i64) as usize;
            f -= &da[p] * state;
        }
        Ok(f * c(self.cutoff.factor(xi.norm(), self.ctx.spec.inner.norm_x(h))))
    }

    /// Right side of the full cutoff system `u' = -A(t, mu0) u + f_eps`, with
    /// the cutoff evaluated on the splitting of `u`.
    fn full_rhs(&self, t: f64, mu: &[f64], u: &CVector) -> Result<CVector> {
        let bundle = &self.ctx.bundle;
        let coeffs = bundle.coefficients_at(t, u);
        let v = bundle.apply_q(t, u);
        let mut f = self.nonlinearity.eval(t, mu, u);
        if self.spec().operator_depends_on_mu() && mu != self.spec().mu.as_slice() {
            let other = self.spec().at_parameter(mu)?;
            f -= (other.operator.eval(t) - self.spec().operator.eval(t)) * u;
        }
        f *= c(self.cutoff.factor(coeffs.norm(), self.ctx.spec.inner.norm_x(&v)));
        Ok(f - self.spec().operator.eval(t) * u)
    }
}

fn shift_path(path: &SampledPath, window: &Window) -> SampledPath {
    let offset = window.start - path.window.start;
    let last = path.values.len() as i64 - 1;
    let values = (0..window.len() as i64)
        .map(|i| path.values[(i + offset).clamp(0, last) as usize].clone())
        .collect();
    SampledPath { window: *window, values }
}

/// A trajectory of the reduced system and its lift to the full state space.
#[derive(Clone, Debug)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub coords: Vec<CVector>,
    pub lifted: Vec<CVector>,
    /// `max |u(t_{k+1}) - Phi(t_{k+1}, t_k) u(t_k)| / dt` against direct
    /// integration of the full system over each step.
    pub lift_residual: f64,
    pub max_contraction: f64,
}

/// Integrates `xi' = R xi + (f(t, mu, U xi + h(t, mu, xi)), psi)` by RK4 with
/// the configured step, from `t0` to `t1` (backward when `t1 < t0`). Both
/// ends must be grid points and the span a multiple of the step.
pub fn integrate_reduced(map: &ManifoldMap, mu: &[f64], xi0: &CVector, t0: f64, t1: f64) -> Result<ReducedTrajectory> {
    let step = map.cfg.reduced_step;
    let count = ((t1 - t0).abs() / step).round() as usize;
    if count == 0 || ((t1 - t0).abs() - count as f64 * step).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "span [{t0}, {t1}] is not a positive multiple of the reduced step {step}"
        )));
    }
    let dt = (t1 - t0).signum() * step;
    let eps = map.cutoff.epsilon;
    let mut times = vec![t0];
    let mut coords = vec![xi0.clone()];
    let (_, state0, mut guess) = map.reduced_rhs(t0, mu, xi0, None)?;
    let mut lifted = vec![state0];
    let mut max_contraction = guess.diagnostics.contraction;
    let mut xi = xi0.clone();
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        if xi.norm() > eps {
            return Err(Error::CutoffExit {
                norm: xi.norm(),
                epsilon: eps,
            });
        }
        let (k1, _, g1) = map.reduced_rhs(t, mu, &xi, Some(&guess))?;
        let (k2, _, g2) = map.reduced_rhs(t + 0.5 * dt, mu, &(&xi + &k1 * c(0.5 * dt)), Some(&g1))?;
        let (k3, _, g3) = map.reduced_rhs(t + 0.5 * dt, mu, &(&xi + &k2 * c(0.5 * dt)), Some(&g2))?;
        let (k4, _, _) = map.reduced_rhs(t + dt, mu, &(&xi + &k3 * c(dt)), Some(&g3))?;
        xi += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0);
        let (_, state, fp) = map.reduced_rhs(t + dt, mu, &xi, Some(&g3))?;
        for g in [&g1, &g2, &g3, &fp] {
            max_contraction = max_contraction.max(g.diagnostics.contraction);
        }
        guess = fp;
        times.push(t + dt);
        coords.push(xi.clone());
        lifted.push(state);
    }
    let mut lift_residual: f64 = 0.0;
    let substeps = (step * map.nt() as f64).round() as usize;
    for k in 0..count {
        let (a, b) = (times[k], times[k + 1]);
        let err = std::cell::RefCell::new(None);
        let traj = integrate_rhs(
            &|t, u| match map.full_rhs(t, mu, u) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    CVector::zeros(u.len())
                }
            },
            a,
            b,
            substeps,
            &lifted[k],
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let end = traj.last().expect("nonempty trajectory");
        lift_residual = lift_residual.max((end - &lifted[k + 1]).norm() / step);
    }
    Ok(ReducedTrajectory {
        times,
        coords,
        lifted,
        lift_residual,
        max_contraction,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CaptureReport {
    pub times: Vec<f64>,
    /// `|Q u(t) - h(t, mu, coefficients(t))|` at each sample time.
    pub errors: Vec<f64>,
    /// Largest error after the burn-in.
    pub max_after_burn_in: f64,
    pub passed: bool,
}

/// Integrates the full cutoff system from `u0` at `t0` and compares its `Q`
/// part with `h` of its coefficients at grid times every `sample` periods.
pub fn verify_bounded_solution_capture(
    map: &ManifoldMap,
    mu: &[f64],
    u0: &CVector,
    t0: f64,
    t1: f64,
    sample: f64,
    burn_in: f64,
) -> Result<CaptureReport> {
    let nt = map.nt();
    let per = (sample * nt as f64).round() as usize;
    if per == 0 {
        return Err(Error::Config("capture sample spacing below the grid".into()));
    }
    let window = Window::new(t0, t1, nt)?;
    let err = std::cell::RefCell::new(None);
    let g = |t: f64, u: &CVector| match map.full_rhs(t, mu, u) {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            CVector::zeros(u.len())
        }
    };
    let traj = integrate_rhs(&g, t0, t1, window.intervals, u0);
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    let bundle = &map.ctx.bundle;
    let mut times = Vec::new();
    let mut errors = Vec::new();
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i <= window.intervals {
        let t = window.time(i);
        let u = &traj.states[i];
        let xi = bundle.coefficients_at(t, u);
        if xi.norm() > map.cutoff.epsilon {
            return Err(Error::CutoffExit {
                norm: xi.norm(),
                epsilon: map.cutoff.epsilon,
            });
        }
        let h = map.value(t, mu, &xi)?;
        let e = (bundle.apply_q(t, u) - h).norm();
        if t - t0 >= burn_in - 1e-12 {
            worst = worst.max(e);
        }
        times.push(t);
        errors.push(e);
        i += per;
    }
    Ok(CaptureReport {
        times,
        errors,
        max_after_burn_in: worst,
        passed: worst <= map.tol.capture,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TangencyReport {
    pub tau: f64,
    /// `|h(tau, mu0, 0)|`.
    pub value: f64,
    /// `|d_xi h(tau, mu0, 0)|` by central differences.
    pub jacobian: f64,
    /// `|Q(tau) h - h|` at a nonzero sample.
    pub range: f64,
    pub passed: bool,
}

pub fn verify_tangency(map: &ManifoldMap, tau: f64) -> Result<TangencyReport> {
    let mu0 = map.mu0();
    let value = map.fixed_point(tau, &mu0, &CVector::zeros(map.dim()))?.h().norm();
    let jacobian = linalg::singular_values(&map.jacobian_at_zero(tau, &mu0)?)
        .first()
        .copied()
        .unwrap_or(0.0);
    let xi = CVector::from_element(map.dim(), c(0.25 * map.cutoff.epsilon / (map.dim() as f64).sqrt()));
    let h = map.fixed_point(tau, &mu0, &xi)?.h();
    let range = (map.ctx.bundle.apply_q(tau, &h) - &h).norm();
    Ok(TangencyReport {
        tau,
        value,
        jacobian,
        range,
        passed: value <= map.tol.fp && jacobian <= 10.0 * map.tol.fp && range <= map.tol.proj,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicityReport {
    /// `max |h(tau + 1, mu, xi) - h(tau, mu, xi)|`.
    pub periodicity: f64,
    /// `max |h(t, mu, 0)|` over sampled `mu` when `f(t, mu, 0) = 0` for all `mu`.
    pub zero_section: Option<f64>,
    /// Largest finite-difference quotient of `h` in `mu`.
    pub mu_lipschitz: Option<f64>,
    pub passed: bool,
}

/// Parameter samples: `mu0` and the box corners along each axis.
fn mu_samples(spec: &ProblemSpec) -> Vec<Vec<f64>> {
    let mu0 = spec.mu.clone();
    let mut out = vec![mu0.clone()];
    for a in 0..mu0.len() {
        for s in [-0.5, 0.5] {
            let mut m = mu0.clone();
            m[a] += s * spec.parameters.radius;
            out.push(m);
        }
    }
    out
}

pub fn verify_periodicity_and_parameters(map: &ManifoldMap, taus: &[f64], xis: &[CVector]) -> Result<PeriodicityReport> {
    let mu0 = map.mu0();
    let mut periodicity: f64 = 0.0;
    for &tau in taus {
        for xi in xis {
            let a = map.fixed_point(tau, &mu0, xi)?.h();
            let b = map.fixed_point(tau + 1.0, &mu0, xi)?.h();
            periodicity = periodicity.max((a - b).norm());
        }
    }
    let spec = map.spec();
    let samples = mu_samples(spec);
    let zero_section = if map.nonlinearity.vanishes_at_zero_for_all_mu() {
        let mut worst: f64 = 0.0;
        for mu in &samples {
            for &tau in taus {
                worst = worst.max(map.fixed_point(tau, mu, &CVector::zeros(map.dim()))?.h().norm());
            }
        }
        Some(worst)
    } else {
        None
    };
    let mu_lipschitz = if mu0.is_empty() || xis.is_empty() {
        None
    } else {
        let delta = 1e-3 * spec.parameters.radius.max(1e-6);
        let mut worst: f64 = 0.0;
        for a in 0..mu0.len() {
            let mut m = mu0.clone();
            m[a] += delta;
            for &tau in taus {
                let base = map.fixed_point(tau, &mu0, &xis[0])?.h();
                let moved = map.fixed_point(tau, &m, &xis[0])?.h();
                worst = worst.max((moved - base).norm() / delta);
            }
        }
        Some(worst)
    };
    let passed = periodicity <= map.tol.fp && zero_section.is_none_or(|z| z <= map.tol.fp) && mu_lipschitz.is_none_or(f64::is_finite);
    Ok(PeriodicityReport {
        periodicity,
        zero_section,
        mu_lipschitz,
        passed,
    })
}

/// Least-squares coefficients of `y = sum_k c_k x^{powers_k}`.
pub fn fit_powers(xs: &[f64], ys: &[f64], powers: &[i32]) -> Result<Vec<f64>> {
    let a = nalgebra::DMatrix::from_fn(xs.len(), powers.len(), |i, k| xs[i].powi(powers[k]));
    let b = nalgebra::DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Config(format!("least squares fit failed: {e}")))?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::propagator::IntegratorConfig;

    #[test]
    fn smoothstep_ends() {
        for order in 1..5 {
            assert_eq!(smoothstep(order, 0.0), 0.0);
            assert!((smoothstep(order, 1.0 - 1e-12) - 1.0).abs() < 1e-9);
            assert!((smoothstep(order, 0.5) - 0.5).abs() < 1e-14);
        }
        let cut = CutoffConfig::new(0.1, 1).unwrap();
        assert_eq!(cut.factor(0.05, 0.05), 1.0);
        assert_eq!(cut.factor(0.3, 0.0), 0.0);
        let mid = cut.factor(0.15, 0.0);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn weighted_norm_closed_forms() {
        let inner = InnerProductPair::identity(1);
        let (tau, gamma, t) = (0.0, 0.5, 4.0);
        let w = Window::new(tau - t, tau + t, 256).unwrap();
        let constant = SampledPath::from_fn(w, |_| CVector::from_element(1, c(2.0)));
        let exact = 2.0 * ((1.0 - (-2.0 * gamma * t).exp()) / gamma).sqrt();
        assert!((weighted_norms(&constant, tau, gamma, &inner).l2 - exact).abs() < 1e-4);
        let growing = SampledPath::from_fn(w, |s| CVector::from_element(1, c((gamma * (s - tau).abs()).exp())));
        assert!((weighted_norms(&growing, tau, gamma, &inner).l2.powi(2) - 2.0 * t).abs() < 1e-9);
        assert_eq!(weighted_norms(&SampledPath::zeros(w, 1), tau, gamma, &inner).h1, 0.0);
    }

    fn e5_map() -> ManifoldMap {
        let spec = bundled::load("e5").unwrap().unwrap();
        let ctx = SplitContext::new(&spec, &IntegratorConfig::default(), &Tolerances::default()).unwrap();
        ManifoldMap::new(Arc::new(ctx), ManifoldConfig::default()).unwrap()
    }

    #[test]
    fn e5_zero_section() {
        let map = e5_map();
        let fp = map.fixed_point(0.0, &[], &CVector::zeros(1)).unwrap();
        assert_eq!(fp.h().norm(), 0.0);
        assert_eq!(fp.diagnostics.iterations, 1);
        assert!(matches!(
            map.fixed_point(0.001, &[], &CVector::zeros(1)),
            Err(Error::OffGrid { .. })
        ));
    }
}
