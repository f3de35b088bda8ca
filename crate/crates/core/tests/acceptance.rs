//! Acceptance criteria, one pass/fail line each.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;

use floquet_core::bundled;
use floquet_core::center_manifold::{
    fit_powers, integrate_reduced, verify_bounded_solution_capture, verify_periodicity_and_parameters, verify_tangency, ManifoldConfig,
    ManifoldMap,
};
use floquet_core::config::Tolerances;
use floquet_core::path::Window;
use floquet_core::pencil::{
    chain_system, collocation_eigens, resolvent_closed_form, resolvent_sweep, verify_pointwise_biorthogonality, NormalizedChainSystem,
    PencilEigenvalue, COLLOCATION_POINTS,
};
use floquet_core::problem::ProblemSpec;
use floquet_core::projector::{projector_bundle, verify_commutation, verify_projector, ProjectorBundle};
use floquet_core::propagator::{fundamental_matrix, IntegratorConfig};
use floquet_core::realform::{real_projector, renumber, verify_conjugation, verify_real_projector};
use floquet_core::splitting::SplitContext;
use floquet_core::verify::{box_forcing, compare_spectra};
use floquet_core::{CVector, C64};

type Outcome = Result<(bool, String), String>;

fn spec(name: &str) -> ProblemSpec {
    bundled::load(name).expect("bundled problem").expect("parses")
}

fn chains(name: &str) -> Result<(ProblemSpec, NormalizedChainSystem), String> {
    let s = spec(name);
    let f = fundamental_matrix(&s, &IntegratorConfig::default()).map_err(|e| e.to_string())?;
    let sys = chain_system(&f, &s.strip, &Tolerances::default()).map_err(|e| e.to_string())?;
    Ok((s, sys))
}

fn bundle(name: &str) -> Result<(ProblemSpec, ProjectorBundle), String> {
    let (s, sys) = chains(name)?;
    Ok((s, projector_bundle(sys)))
}

fn context(name: &str) -> Result<SplitContext, String> {
    SplitContext::new(&spec(name), &IntegratorConfig::default(), &Tolerances::default()).map_err(|e| e.to_string())
}

fn manifold(name: &str) -> Result<ManifoldMap, String> {
    ManifoldMap::new(Arc::new(context(name)?), ManifoldConfig::default()).map_err(|e| e.to_string())
}

fn all_names() -> Vec<&'static str> {
    bundled::ALL.iter().map(|(n, _)| *n).collect()
}

fn spectrum_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["e1", "e2", "e3", "e4", "e4_pi", "mathieu"] {
        let (s, sys) = chains(name)?;
        let eigs: Vec<PencilEigenvalue> = sys.blocks.iter().map(|b| b.eig.clone()).collect();
        let colloc = collocation_eigens(&s, COLLOCATION_POINTS, 1e-6);
        worst = worst.max(compare_spectra(&eigs, &colloc));
    }
    Ok((worst <= 1e-6, format!("max |dlambda| = {worst:.2e} with equal multiplicities")))
}

fn biorthogonality() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in all_names() {
        worst = worst.max(chains(name)?.1.biorthogonality_defect());
    }
    Ok((worst <= 1e-8, format!("max deviation {worst:.2e}")))
}

fn pointwise() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut e3 = 0.0;
    for name in all_names() {
        let (_, sys) = chains(name)?;
        let r = verify_pointwise_biorthogonality(&sys, &Tolerances::default());
        if name == "e3" {
            e3 = r.max;
        }
        worst = worst.max(r.max);
    }
    Ok((worst <= 1e-7, format!("max deviation {worst:.2e} (E3 {e3:.2e})")))
}

fn projector() -> Outcome {
    let tol = Tolerances::default();
    let (mut idem, mut comm, mut two): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for name in all_names() {
        let (s, b) = bundle(name)?;
        idem = idem.max(verify_projector(&b, &tol).idempotency);
        let c = verify_commutation(&b, &s, 20, 11, &tol);
        comm = c.commutator.iter().copied().fold(comm, f64::max);
        two = c.two_path.iter().copied().fold(two, f64::max);
    }
    let ok = idem <= 1e-7 && comm <= 1e-6 && two <= 1e-6;
    Ok((ok, format!("idempotency {idem:.2e}, commutator {comm:.2e}, two-path {two:.2e}")))
}

fn splitting() -> Outcome {
    let e1 = context("e1")?;
    let f = box_forcing(3, -6.0, 6.0);
    let w = Window::new(-12.0, 12.0, 256).map_err(|e| e.to_string())?;
    let s1 = e1.split(&f, &w, 0.0, &CVector::zeros(1)).map_err(|e| e.to_string())?;
    let taus: Vec<f64> = (-8..=8).map(|k| 0.5 * k as f64).collect();
    let rows = e1.estimate(&s1.v_part, &f, &taus).map_err(|e| e.to_string())?;
    let finite = rows.iter().all(|r| r.ratio.is_finite() && r.ratio > 0.0);
    let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);

    let e3 = context("e3")?;
    let g = box_forcing(2, 0.0, 1.5);
    let w3 = Window::new(-3.0, 4.0, 256).map_err(|e| e.to_string())?;
    let xi = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    let s3 = e3.split(&g, &w3, 0.0, &xi).map_err(|e| e.to_string())?;

    // A forcing with Q f = 0 has no remainder.
    let mut unique: f64 = 0.0;
    for (ctx, n) in [(&e1, 3), (&e3, 2)] {
        let b = ctx.bundle.clone();
        let h = box_forcing(n, -1.0, 1.0);
        let pf = move |t: f64| b.apply_p(t, &h(t));
        let (v, _) = ctx
            .solve_remainder(&pf, &Window::new(-3.0, 3.0, 256).unwrap())
            .map_err(|e| e.to_string())?;
        unique = unique.max(v.sup_norm());
    }
    let residual = s1.residual.max(s3.residual);
    let ok = residual <= 2e-6 && finite && hi / lo <= 10.0 && unique <= 1e-8;
    Ok((
        ok,
        format!("residual {residual:.2e}, C(tau) in [{lo:.3}, {hi:.3}] on E1 (E3 has Q = 0), uniqueness {unique:.2e}"),
    ))
}

fn asymptotics() -> Outcome {
    let ctx = context("e1")?;
    let unit = |t: f64| {
        let mut v = CVector::zeros(3);
        if t > 0.0 && t < 1.0 {
            v[0] = C64::new(1.0, 0.0);
        }
        v
    };
    let w = Window::new(-2.0, 3.0, 256).map_err(|e| e.to_string())?;
    let e = ctx.asymptotic_difference(&unit, &w, 0.0).map_err(|e| e.to_string())?;
    let c = e.coefficients.first().map(|x| x.1).unwrap_or_default();
    let mut residual = e.residual;
    for name in ["e3", "e4", "mathieu"] {
        let ctx = context(name)?;
        let n = ctx.bundle.dim();
        let w = Window::new(-3.0, 4.0, 256).map_err(|e| e.to_string())?;
        residual = residual.max(
            ctx.asymptotic_difference(&box_forcing(n, 0.0, 1.0), &w, 0.0)
                .map_err(|e| e.to_string())?
                .residual,
        );
    }
    let ok = residual <= 1e-7 && (c - C64::new(1.0, 0.0)).norm() <= 1e-7 && e.coefficients.len() == 1;
    Ok((
        ok,
        format!("reconstruction residual {residual:.2e}, E1 c = {:.10} {:+.1e}i", c.re, c.im),
    ))
}

fn real_form() -> Outcome {
    let (mut agree, mut imag, mut spec_err, mut conj, mut shift): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for name in all_names() {
        let (s, b) = bundle(name)?;
        if !s.real {
            continue;
        }
        let eigs: Vec<PencilEigenvalue> = b.system.blocks.iter().map(|x| x.eig.clone()).collect();
        let pairing = renumber(&eigs, true).map_err(|e| e.to_string())?;
        let real = real_projector(&b, &pairing).map_err(|e| e.to_string())?;
        let r = verify_real_projector(&b, &real, 20, 5, 1e-9);
        let c = verify_conjugation(&b, &pairing, 1e-9);
        agree = agree.max(r.agreement);
        imag = imag.max(r.imaginary);
        spec_err = spec_err.max(r.spectrum);
        conj = conj.max(c.conjugation).max(c.decomposition);
        shift = shift.max(c.shift_projector).max(c.shift_residual);
    }
    let ok = agree <= 1e-9 && imag <= 1e-10 && spec_err <= 1e-10 && conj <= 1e-9 && shift <= 1e-9;
    Ok((
        ok,
        format!("agreement {agree:.2e}, R_real spectrum {spec_err:.2e}, conjugation {conj:.2e}, 2 pi i shift {shift:.2e}"),
    ))
}

/// Quadratic and quartic coefficients of the stable component of `h` at
/// `tau = 0` against the first state coordinate.
fn taylor(map: &ManifoldMap) -> Result<Vec<f64>, String> {
    let unit = map.ctx.bundle.combine_at(0.0, &CVector::from_element(1, C64::new(1.0, 0.0)));
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 1..=5 {
        let x = 0.02 * k as f64;
        let xi = CVector::from_element(1, C64::new(x, 0.0) / unit[0]);
        let h = map.fixed_point(0.0, &[], &xi).map_err(|e| e.to_string())?.h();
        xs.push(x);
        ys.push(h[1].re);
    }
    fit_powers(&xs, &ys, &[2, 4, 6]).map_err(|e| e.to_string())
}

fn center_manifold() -> Outcome {
    let constant = manifold("e5")?;
    let periodic = manifold("e5_periodic")?;
    let fit = taylor(&constant)?;
    let c0 = taylor(&periodic)?[0];
    let c0_exact = 1.0 + 1.0 / (2.0 * (1.0 + 4.0 * PI * PI));
    let (mut value, mut jac, mut per, mut lift, mut capture): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for map in [&constant, &periodic] {
        for tau in [0.0, 0.5] {
            let t = verify_tangency(map, tau).map_err(|e| e.to_string())?;
            value = value.max(t.value);
            jac = jac.max(t.jacobian);
        }
        let xis = [CVector::from_element(1, C64::new(0.05, 0.0))];
        per = per.max(
            verify_periodicity_and_parameters(map, &[0.0, 0.25], &xis)
                .map_err(|e| e.to_string())?
                .periodicity,
        );
        let traj = integrate_reduced(map, &[], &xis[0], 0.0, 1.0).map_err(|e| e.to_string())?;
        lift = lift.max(traj.lift_residual);
        let mut u0 = map.lift(0.0, &[], &xis[0]).map_err(|e| e.to_string())?;
        u0[1] += C64::new(1e-3, 0.0);
        let c = verify_bounded_solution_capture(map, &[], &u0, 0.0, 6.0, 0.5, 3.0).map_err(|e| e.to_string())?;
        capture = capture.max(c.max_after_burn_in);
    }
    let ok = (fit[0] - 1.0).abs() <= 0.05
        && (fit[1] + 2.0).abs() <= 0.2
        && (c0 - c0_exact).abs() <= 1e-3
        && value <= 1e-9
        && jac <= 1e-8
        && lift <= 1e-5
        && capture <= 1e-4
        && per <= 1e-9;
    Ok((
        ok,
        format!(
            "h ~ {:.4} x^2 {:+.4} x^4, periodic c(0) = {c0:.6} (exact {c0_exact:.6}), tangency {value:.1e}/{jac:.1e}, \
             lift {lift:.1e}, capture {capture:.1e}, periodicity {per:.1e}",
            fit[0], fit[1]
        ),
    ))
}

fn resolvent() -> Outcome {
    let s = spec("scalar_one");
    let beta = s.strip.beta2;
    let xi: Vec<f64> = (0..=48).map(|k| -6.0 * PI + k as f64 * PI / 4.0).collect();
    let swept = resolvent_sweep(&s, beta, &xi, COLLOCATION_POINTS).map_err(|e| e.to_string())?;
    let exact = resolvent_closed_form(&s, beta, &xi, COLLOCATION_POINTS).map_err(|e| e.to_string())?;
    let rel = swept.iter().zip(&exact).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    Ok((rel <= 0.01, format!("max relative deviation {rel:.2e} over xi in [-6 pi, 6 pi]")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("spectrum oracle equivalence", spectrum_oracle),
        ("biorthogonality", biorthogonality),
        ("pointwise biorthogonality", pointwise),
        ("projector theorem", projector),
        ("splitting estimate", splitting),
        ("asymptotics", asymptotics),
        ("real form", real_form),
        ("center manifold", center_manifold),
        ("resolvent sweep", resolvent),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (passed, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        all &= passed;
        println!("criterion {} {name}: {} ({detail})", i + 1, if passed { "PASS" } else { "FAIL" });
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
