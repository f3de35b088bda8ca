//! The property suite run by `floquet verify`: every invariant of the
//! library checked on one problem, as a list of named measurements.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::center_manifold::{integrate_reduced, verify_periodicity_and_parameters, verify_tangency, ManifoldConfig, ManifoldMap};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::path::{SampledPath, Window};
use crate::pencil::{
    collocation_eigens, resolvent_closed_form, resolvent_sweep, verify_pointwise_biorthogonality, CollocationEigen, PencilEigenvalue,
    COLLOCATION_POINTS,
};
use crate::problem::ProblemSpec;
use crate::projector::{verify_commutation, verify_projector};
use crate::propagator::IntegratorConfig;
use crate::realform::{real_projector, renumber, verify_conjugation, verify_real_projector};
use crate::splitting::SplitContext;
use crate::{CVector, C64};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
            detail: None,
        }
    }

    fn failed(name: &str, err: &Error) -> Self {
        Self {
            name: name.into(),
            value: f64::NAN,
            tolerance: f64::NAN,
            passed: false,
            detail: Some(err.to_string()),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random trig paths for the commutation check.
    pub paths: usize,
    pub manifold: ManifoldConfig,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: 20,
            manifold: ManifoldConfig::default(),
        }
    }
}

/// Matches monodromy exponents to collocation exponents; returns the largest
/// distance, or infinity when the sets or multiplicities differ.
pub fn compare_spectra(monodromy: &[PencilEigenvalue], collocation: &[CollocationEigen]) -> f64 {
    if monodromy.len() != collocation.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; collocation.len()];
    let mut worst: f64 = 0.0;
    for e in monodromy {
        let dist = |l: C64| {
            let d = e.lambda - l;
            let k = (d.im / (2.0 * PI)).round();
            (d - C64::new(0.0, 2.0 * PI * k)).norm()
        };
        let best = collocation
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .min_by(|a, b| dist(a.1.lambda).total_cmp(&dist(b.1.lambda)));
        match best {
            Some((i, c)) if c.algebraic == e.algebraic => {
                used[i] = true;
                worst = worst.max(dist(c.lambda));
            }
            _ => return f64::INFINITY,
        }
    }
    worst
}

/// Smooth forcing supported on `[a, b]`, one pattern per component.
pub fn box_forcing(dim: usize, a: f64, b: f64) -> impl Fn(f64) -> CVector + Sync {
    move |t| {
        if t > a && t < b {
            CVector::from_fn(dim, |i, _| C64::new(1.0 + 0.5 * (2.0 * PI * (i + 1) as f64 * t / 3.0).sin(), 0.0))
        } else {
            CVector::zeros(dim)
        }
    }
}

fn push(checks: &mut Vec<Check>, name: &str, r: Result<Vec<Check>>) {
    match r {
        Ok(c) => checks.extend(c),
        Err(e) => checks.push(Check::failed(name, &e)),
    }
}

fn spectral_checks(spec: &ProblemSpec, ctx: &SplitContext, tol: &Tolerances) -> Vec<Check> {
    let f = &ctx.fundamental;
    let sys = &ctx.bundle.system;
    let eigs: Vec<PencilEigenvalue> = sys.blocks.iter().map(|b| b.eig.clone()).collect();
    let colloc = collocation_eigens(spec, COLLOCATION_POINTS, 1e-6);
    let scale = spec.operator.norm_bound().max(1.0);
    vec![
        Check::at_most("fundamental.residual", f.residual() / scale, tol.residual),
        Check::at_most("fundamental.liouville", f.liouville_defect(), tol.liouville),
        Check::at_most("spectrum.collocation", compare_spectra(&eigs, &colloc), 1e-6)
            .with_detail(format!("{} exponent(s) in the strip", eigs.len())),
        Check::at_most("chains.residual", sys.max_chain_residual(), tol.chain),
        Check::at_most("chains.biorthogonality", sys.biorthogonality_defect(), tol.biorth),
        Check::at_most("chains.pointwise", verify_pointwise_biorthogonality(sys, tol).max, tol.pointwise),
    ]
}

fn projector_checks(spec: &ProblemSpec, ctx: &SplitContext, tol: &Tolerances, opts: &SuiteOptions) -> Vec<Check> {
    let rep = verify_projector(&ctx.bundle, tol);
    let comm = verify_commutation(&ctx.bundle, spec, opts.paths, opts.seed, tol);
    let two_path = comm.two_path.iter().copied().fold(0.0, f64::max);
    let commutator = comm.commutator.iter().copied().fold(0.0, f64::max);
    vec![
        Check::at_most("projector.idempotency", rep.idempotency, tol.proj),
        Check::at_most(
            "projector.rank",
            (rep.rank_min.abs_diff(rep.expected_rank) + rep.rank_max.abs_diff(rep.expected_rank)) as f64,
            0.0,
        ),
        Check::at_most("projector.commutation", commutator, tol.comm),
        Check::at_most("projector.two_path", two_path, tol.comm),
    ]
}

fn splitting_checks(ctx: &SplitContext, tol: &Tolerances, opts: &SuiteOptions) -> Result<Vec<Check>> {
    let n = ctx.bundle.dim();
    let nt = ctx.fundamental.nt();
    let mut checks = Vec::new();
    let f = box_forcing(n, -6.0, 6.0);
    let window = Window::new(-12.0, 12.0, nt)?;
    let xi = CVector::zeros(ctx.bundle.total());
    let split = ctx.split(&f, &window, 0.0, &xi)?;
    checks.push(Check::at_most("split.residual", split.residual, 2.0 * tol.rem));
    let taus: Vec<f64> = (-8..=8).map(|k| 0.5 * k as f64).collect();
    let rows = ctx.estimate(&split.v_part, &f, &taus)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).filter(|r| r.is_finite()).collect();
    if ctx.bundle.total() == n || ratios.is_empty() {
        checks.push(Check::at_most("split.ratio_spread", 0.0, 10.0).with_detail("range of Q is trivial; bound is vacuous"));
    } else {
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        checks.push(Check::at_most("split.ratio_spread", spread, 10.0).with_detail(format!("C(tau) in [{lo:.4e}, {hi:.4e}]")));
    }
    // Uniqueness: forcing in the range of P leaves no remainder, and
    // homogeneous strip solutions have no Q part.
    let bundle = ctx.bundle.clone();
    let pf = move |t: f64| bundle.apply_p(t, &f(t));
    let w = Window::new(-3.0, 3.0, nt)?;
    let (v, _) = ctx.solve_remainder(&pf, &w)?;
    let basis = ctx.phi_basis();
    let mut q_phi: f64 = 0.0;
    for &(k, j, m) in &ctx.bundle.theta {
        let p = basis.path(k, j, m, &w);
        let scale = p.sup_norm().max(1.0);
        for (i, val) in p.values.iter().enumerate() {
            q_phi = q_phi.max(ctx.bundle.apply_q_at_phase(w.phase(i), val).norm() / scale);
        }
    }
    checks.push(Check::at_most("split.uniqueness", v.sup_norm().max(q_phi), 1e-8));
    // Shift identity of the Floquet solutions.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rela: f64 = 0.0;
    if !ctx.bundle.theta.is_empty() {
        for _ in 0..10 {
            let &(k, j, m) = &ctx.bundle.theta[rng.gen_range(0..ctx.bundle.theta.len())];
            let tau = rng.gen_range(-2.0..2.0);
            let t = rng.gen_range(-2.0..2.0);
            let scale = basis.eval(k, j, m, t).norm().max(1.0);
            rela = rela.max(basis.shift_defect(k, j, m, t, tau) / scale);
        }
    }
    checks.push(Check::at_most("split.shift_identity", rela, 1e-10));
    let unit = box_forcing(n, 0.0, 1.0);
    let aw = Window::new(-3.0, 4.0, nt)?;
    let e = ctx.asymptotic_difference(&unit, &aw, 0.0)?;
    checks.push(Check::at_most("asym.residual", e.residual, 1e-7));
    Ok(checks)
}

fn real_checks(ctx: &SplitContext, opts: &SuiteOptions) -> Result<Vec<Check>> {
    let eigs: Vec<PencilEigenvalue> = ctx.bundle.system.blocks.iter().map(|b| b.eig.clone()).collect();
    let pairing = renumber(&eigs, ctx.spec.real)?;
    let real = real_projector(&ctx.bundle, &pairing)?;
    let agree = verify_real_projector(&ctx.bundle, &real, 20, opts.seed, 1e-9);
    let conj = verify_conjugation(&ctx.bundle, &pairing, 1e-9);
    Ok(vec![
        Check::at_most("realform.agreement", agree.agreement, 1e-9).with_detail(format!(
            "sigma = {}, eps0 = {}, eps_pi = {}",
            pairing.sigma,
            pairing.epsilon0(),
            pairing.epsilon_sigma1()
        )),
        Check::at_most("realform.imaginary", agree.imaginary, 1e-10),
        Check::at_most("realform.spectrum", agree.spectrum, 1e-10),
        Check::at_most("realform.conjugation", conj.conjugation, 1e-9),
        Check::at_most("realform.shift", conj.shift_projector.max(conj.shift_residual), 1e-9),
        Check::at_most("realform.decomposition", conj.decomposition, 1e-9),
    ])
}

fn manifold_checks(ctx: Arc<SplitContext>, opts: &SuiteOptions) -> Result<Vec<Check>> {
    let map = ManifoldMap::new(ctx, opts.manifold)?;
    let tol = map.tol;
    let mut checks = Vec::new();
    let mut value: f64 = 0.0;
    let mut jac: f64 = 0.0;
    let mut range: f64 = 0.0;
    for tau in [0.0, 0.25, 0.5, 0.75] {
        let r = verify_tangency(&map, tau)?;
        value = value.max(r.value);
        jac = jac.max(r.jacobian);
        range = range.max(r.range);
    }
    checks.push(Check::at_most("manifold.tangency", value, tol.fp));
    checks.push(Check::at_most("manifold.jacobian", jac, 10.0 * tol.fp));
    checks.push(Check::at_most("manifold.range", range, tol.proj));
    let m = map.dim();
    let xi = CVector::from_element(m, C64::new(0.5 * map.cutoff.epsilon / (m as f64).sqrt(), 0.0));
    let fp = map.fixed_point(0.0, &map.mu0(), &xi)?;
    checks.push(Check::at_most("manifold.contraction", fp.diagnostics.contraction, 1.0 - 1e-12));
    let per = verify_periodicity_and_parameters(&map, &[0.0, 0.5], std::slice::from_ref(&xi))?;
    checks.push(Check::at_most("manifold.periodicity", per.periodicity, tol.fp));
    if let Some(z) = per.zero_section {
        checks.push(Check::at_most("manifold.zero_section", z, tol.fp));
    }
    let small = xi * C64::new(0.5, 0.0);
    let traj = integrate_reduced(&map, &map.mu0(), &small, 0.0, 0.5)?;
    checks.push(Check::at_most("manifold.lift", traj.lift_residual, tol.lift));
    Ok(checks)
}

fn resolvent_checks(spec: &ProblemSpec) -> Result<Vec<Check>> {
    let beta = spec.strip.beta2;
    let xi: Vec<f64> = (0..=24).map(|k| -6.0 * PI + k as f64 * PI / 2.0).collect();
    let swept = resolvent_sweep(spec, beta, &xi, COLLOCATION_POINTS)?;
    let exact = resolvent_closed_form(spec, beta, &xi, COLLOCATION_POINTS)?;
    let rel = swept.iter().zip(&exact).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    Ok(vec![Check::at_most("resolvent.closed_form", rel, 0.01)])
}

/// Runs every applicable check on one problem.
pub fn run_suite(spec: &ProblemSpec, cfg: &IntegratorConfig, tol: &Tolerances, opts: &SuiteOptions) -> Result<SuiteReport> {
    let ctx = Arc::new(SplitContext::new(spec, cfg, tol)?);
    let mut checks = spectral_checks(spec, &ctx, tol);
    checks.extend(projector_checks(spec, &ctx, tol, opts));
    push(&mut checks, "split", splitting_checks(&ctx, tol, opts));
    if spec.real {
        push(&mut checks, "realform", real_checks(&ctx, opts));
    }
    if spec.nonlinearity.is_some() {
        push(&mut checks, "manifold", manifold_checks(ctx.clone(), opts));
    }
    if spec.operator.is_constant() {
        push(&mut checks, "resolvent", resolvent_checks(spec));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { checks, passed })
}

/// Samples `f` on a window as a path; used by callers that need the forcing
/// on the grid.
pub fn sample_path(window: &Window, f: &dyn Fn(f64) -> CVector) -> SampledPath {
    SampledPath::from_fn(*window, f)
}
