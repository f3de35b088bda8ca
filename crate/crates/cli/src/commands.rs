//! The subcommands and the artifacts they write.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use floquet_core::bundled;
use floquet_core::center_manifold::{fit_powers, integrate_reduced, ManifoldConfig, ManifoldMap};
use floquet_core::config::Tolerances;
use floquet_core::format::parse_problem;
use floquet_core::path::Window;
use floquet_core::pencil::{chain_system, NormalizedChainSystem, PencilEigenvalue};
use floquet_core::problem::ProblemSpec;
use floquet_core::projector::{extract_coefficients, projector_bundle, split_path};
use floquet_core::propagator::{fundamental_matrix, IntegratorConfig};
use floquet_core::realform::{real_projector, renumber};
use floquet_core::splitting::SplitContext;
use floquet_core::verify::{run_suite, SuiteOptions};
use floquet_core::{CVector, C64};
use rayon::prelude::*;
use serde_json::json;

use crate::io::{complex_fields, complex_header, num, write_json, write_path, Series, Table};
use crate::manifest::{run_id, sha256_hex, unix_now, ConfigEcho, RunManifest, Timing};
use crate::{Cli, CliError, Command, ForcingArgs};

struct Run {
    spec: ProblemSpec,
    tol: Tolerances,
    cfg: IntegratorConfig,
    out: PathBuf,
    id: String,
    artifacts: Vec<String>,
    stages: Vec<(String, f64)>,
    summary: serde_json::Value,
    failure: Option<String>,
    clock: Instant,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn stage(&mut self, name: &str, start: Instant) {
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{name}: {seconds:.3} s");
        self.stages.push((name.to_string(), seconds));
    }

    fn nt(&self) -> usize {
        self.spec.grid.len()
    }

    fn context(&mut self) -> Result<SplitContext, CliError> {
        let start = Instant::now();
        let ctx = SplitContext::new(&self.spec, &self.cfg, &self.tol)?;
        self.stage("splitting context", start);
        Ok(ctx)
    }

    fn chains(&mut self) -> Result<NormalizedChainSystem, CliError> {
        let start = Instant::now();
        let f = fundamental_matrix(&self.spec, &self.cfg)?;
        let sys = chain_system(&f, &self.spec.strip, &self.tol)?;
        self.stage("chains", start);
        Ok(sys)
    }
}

fn load_problem(name: &str) -> Result<(String, String), CliError> {
    let path = Path::new(name);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        return Ok((text, path.display().to_string()));
    }
    match bundled::source(name) {
        Some(text) => Ok((text.to_string(), format!("bundled:{name}"))),
        None => Err(CliError::Input(format!("{name} is neither a file nor a bundled problem"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<f64>().map_err(|e| CliError::Input(format!("{x}: {e}"))))
        .collect()
}

fn parse_span(s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::Input(format!("expected t0:t1, got {s}")));
    }
    let a = parts[0].trim().parse::<f64>().map_err(|e| CliError::Input(format!("{s}: {e}")))?;
    let b = parts[1].trim().parse::<f64>().map_err(|e| CliError::Input(format!("{s}: {e}")))?;
    if b <= a {
        return Err(CliError::Input(format!("empty span {s}")));
    }
    Ok((a, b))
}

fn real_vector(values: &[f64]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|&x| C64::new(x, 0.0)))
}

fn option_echo(command: &Command) -> serde_json::Value {
    match command {
        Command::Spectrum | Command::Chains | Command::Realform => json!({}),
        Command::Project { input } => json!({ "input": input }),
        Command::Split {
            forcing,
            tau,
            xi,
            estimate_step,
        } => json!({
            "forcing": forcing.forcing, "unit_box": forcing.unit_box, "tau": tau, "xi": xi, "estimate_step": estimate_step
        }),
        Command::Asym { forcing, tau } => json!({ "forcing": forcing.forcing, "unit_box": forcing.unit_box, "tau": tau }),
        Command::Reduce {
            mu,
            taus,
            xi_max,
            xi_count,
            trajectory,
            xi0,
        } => json!({
            "mu": mu, "taus": taus, "xi_max": xi_max, "xi_count": xi_count, "trajectory": trajectory, "xi0": xi0
        }),
        Command::Verify { paths } => json!({ "paths": paths }),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Spectrum => "spectrum",
        Command::Chains => "chains",
        Command::Project { .. } => "project",
        Command::Split { .. } => "split",
        Command::Asym { .. } => "asym",
        Command::Realform => "realform",
        Command::Reduce { .. } => "reduce",
        Command::Verify { .. } => "verify",
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let started = unix_now();
    let clock = Instant::now();
    let c = &cli.common;
    let (text, label) = load_problem(&c.problem)?;
    let mut spec = parse_problem(&text)?;
    if let Some(nt) = c.grid_nt {
        spec = spec.with_grid(nt)?;
    }
    let tol = c.tol.apply()?;
    let cfg = IntegratorConfig { substeps: c.substeps };
    cfg.validate()?;
    let window = c.window.as_deref().map(parse_span).transpose()?;
    let echo = ConfigEcho {
        command: command_name(&cli.command).to_string(),
        problem: label,
        grid_nt: spec.grid.len(),
        substeps: cfg.substeps,
        window,
        gamma: c.gamma,
        epsilon: c.epsilon,
        seed: c.seed,
        options: option_echo(&cli.command),
    };
    let problem_sha256 = sha256_hex(text.as_bytes());
    let id = run_id(&problem_sha256, &echo, &tol);
    std::fs::create_dir_all(&c.out).map_err(|e| CliError::Io(format!("{}: {e}", c.out.display())))?;
    let mut run = Run {
        spec,
        tol,
        cfg,
        out: c.out.clone(),
        id,
        artifacts: Vec::new(),
        stages: Vec::new(),
        summary: json!({}),
        failure: None,
        clock,
    };
    match &cli.command {
        Command::Spectrum => spectrum(&mut run)?,
        Command::Chains => chains(&mut run)?,
        Command::Project { input } => project(&mut run, input)?,
        Command::Split {
            forcing,
            tau,
            xi,
            estimate_step,
        } => split(&mut run, forcing, window, *tau, xi.as_deref(), *estimate_step)?,
        Command::Asym { forcing, tau } => asym(&mut run, forcing, window, *tau)?,
        Command::Realform => realform(&mut run)?,
        Command::Reduce {
            mu,
            taus,
            xi_max,
            xi_count,
            trajectory,
            xi0,
        } => {
            let cfg = ManifoldConfig {
                epsilon: c.epsilon.unwrap_or(ManifoldConfig::default().epsilon),
                gamma: c.gamma,
                ..ManifoldConfig::default()
            };
            let request = ReduceRequest {
                mu: mu.as_deref().map(parse_list).transpose()?,
                taus: parse_list(taus)?,
                xi_max: *xi_max,
                xi_count: *xi_count,
                trajectory: trajectory.as_deref().map(parse_span).transpose()?,
                xi0: xi0.as_deref().map(parse_list).transpose()?,
            };
            reduce(&mut run, cfg, &request)?
        }
        Command::Verify { paths } => verify(&mut run, c.seed, *paths, c.epsilon, c.gamma)?,
    }
    let manifest = RunManifest {
        run: run.id.clone(),
        tool: "floquet".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        problem_sha256,
        config: echo,
        tolerances: run.tol,
        artifacts: run.artifacts.clone(),
        summary: run.summary.clone(),
        timing: Timing {
            started_unix: started,
            stages: run.stages.clone(),
            total_seconds: run.clock.elapsed().as_secs_f64(),
        },
    };
    write_json(&run.out.join("manifest.json"), &manifest)?;
    match run.failure {
        Some(m) => Err(CliError::Property(m)),
        None => Ok(()),
    }
}

fn eigen_record(k: usize, e: &PencilEigenvalue) -> serde_json::Value {
    json!({
        "k": k,
        "lambda": [e.lambda.re, e.lambda.im],
        "multiplier": [e.multiplier.re, e.multiplier.im],
        "geometric": e.geometric,
        "partial": e.partial,
        "algebraic": e.algebraic,
        "cluster_condition": e.condition,
    })
}

fn spectrum(run: &mut Run) -> Result<(), CliError> {
    let sys = run.chains()?;
    let mut records = Vec::new();
    let path = run.path("spectrum.csv");
    let header: Vec<String> = [
        "k",
        "lambda_re",
        "lambda_im",
        "multiplier_re",
        "multiplier_im",
        "geometric",
        "algebraic",
        "partial",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut table = Table::create(&path, &run.id, &header)?;
    for (k, b) in sys.blocks.iter().enumerate() {
        let e = &b.eig;
        let mut r = eigen_record(k, e);
        r["chain_residual"] = json!(b.chain_residual);
        r["adjoint_residual"] = json!(b.adjoint_residual);
        r["gram_condition"] = json!(b.gram_condition);
        records.push(r);
        let partial: Vec<String> = e.partial.iter().map(|m| m.to_string()).collect();
        table.row(&[
            k.to_string(),
            num(e.lambda.re),
            num(e.lambda.im),
            num(e.multiplier.re),
            num(e.multiplier.im),
            e.geometric.to_string(),
            e.algebraic.to_string(),
            partial.join(" "),
        ])?;
        println!(
            "lambda[{k}] = {:.10} {:+.10}i  partial multiplicities {:?}",
            e.lambda.re, e.lambda.im, e.partial
        );
    }
    table.finish()?;
    let report = json!({
        "run": run.id,
        "manifest": "manifest.json",
        "strip": [run.spec.strip.beta1, run.spec.strip.beta2],
        "total_multiplicity": sys.total_multiplicity(),
        "biorthogonality_defect": sys.biorthogonality_defect(),
        "eigenvalues": records,
    });
    let path = run.path("spectrum.json");
    write_json(&path, &report)?;
    run.summary = json!({ "eigenvalues": sys.blocks.len(), "total_multiplicity": sys.total_multiplicity() });
    Ok(())
}

fn chains(run: &mut Run) -> Result<(), CliError> {
    let sys = run.chains()?;
    let n = sys.dim();
    let mut header: Vec<String> = ["kind", "k", "j", "m", "t"].iter().map(|s| s.to_string()).collect();
    header.extend(complex_header("x", n));
    let path = run.path("chains.csv");
    let mut table = Table::create(&path, &run.id, &header)?;
    for (k, b) in sys.blocks.iter().enumerate() {
        for (kind, set) in [("phi", &b.chains), ("psi", &b.adjoint)] {
            for j in 0..set.count() {
                for m in 0..set.lengths[j] {
                    for i in 0..set.nt() {
                        let mut row = vec![
                            kind.to_string(),
                            k.to_string(),
                            j.to_string(),
                            m.to_string(),
                            num(i as f64 / set.nt() as f64),
                        ];
                        row.extend(complex_fields(set.at_grid(j, m, i)));
                        table.row(&row)?;
                    }
                }
            }
        }
    }
    table.finish()?;
    run.summary = json!({
        "chains": sys.theta().len(),
        "max_chain_residual": sys.max_chain_residual(),
        "biorthogonality_defect": sys.biorthogonality_defect(),
    });
    Ok(())
}

fn project(run: &mut Run, input: &Path) -> Result<(), CliError> {
    let sys = run.chains()?;
    let bundle = projector_bundle(sys);
    let series = Series::read(input, run.spec.dimension)?;
    let u = series.to_path(run.nt())?;
    let start = Instant::now();
    let (p, q) = split_path(&bundle, &u);
    let coeffs = extract_coefficients(&bundle, &u)?;
    run.stage("project", start);
    let path = run.path("u_part.csv");
    write_path(&path, &run.id, "u", &p)?;
    let path = run.path("v_part.csv");
    write_path(&path, &run.id, "v", &q)?;
    let path = run.path("coefficients.csv");
    write_path(&path, &run.id, "c", &coeffs)?;
    run.summary = json!({ "samples": u.values.len(), "p_sup": p.sup_norm(), "q_sup": q.sup_norm() });
    Ok(())
}

/// Forcing closure and the time range of its support.
fn forcing(args: &ForcingArgs, dim: usize) -> Result<(Box<dyn Fn(f64) -> CVector + Sync>, (f64, f64)), CliError> {
    if let Some(path) = &args.forcing {
        let series = Series::read(path, dim)?;
        let span = (series.times[0], *series.times.last().unwrap());
        return Ok((Box::new(move |t| series.eval(t)), span));
    }
    let parts: Vec<&str> = args.unit_box.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(CliError::Input(format!("expected a:b[:component], got {}", args.unit_box)));
    }
    let (a, b) = parse_span(&format!("{}:{}", parts[0], parts[1]))?;
    let comp = match parts.get(2) {
        Some(s) => s.trim().parse::<usize>().map_err(|e| CliError::Input(format!("{s}: {e}")))?,
        None => 0,
    };
    if comp >= dim {
        return Err(CliError::Input(format!("component {comp} out of range for dimension {dim}")));
    }
    let f = move |t: f64| {
        let mut v = CVector::zeros(dim);
        if t > a && t < b {
            v[comp] = C64::new(1.0, 0.0);
        }
        v
    };
    Ok((Box::new(f), (a, b)))
}

fn window_for(window: Option<(f64, f64)>, support: (f64, f64), pad: f64, nt: usize) -> Result<Window, CliError> {
    match window {
        Some((a, b)) => Ok(Window::new(a, b, nt)?),
        None => Ok(Window::covering(support.0.floor() - pad, support.1.ceil() + pad, nt)),
    }
}

fn split(
    run: &mut Run,
    args: &ForcingArgs,
    window: Option<(f64, f64)>,
    tau: Option<f64>,
    xi: Option<&str>,
    step: f64,
) -> Result<(), CliError> {
    let ctx = run.context()?;
    let (f, support) = forcing(args, run.spec.dimension)?;
    let w = window_for(window, support, 4.0, run.nt())?;
    let tau = tau.unwrap_or(if w.t0() <= 0.0 && 0.0 <= w.t1() { 0.0 } else { w.t0() });
    let total = ctx.bundle.total();
    let xi = match xi {
        Some(s) => {
            let v = parse_list(s)?;
            if v.len() != total {
                return Err(CliError::Input(format!("xi needs {total} entries, got {}", v.len())));
            }
            real_vector(&v)
        }
        None => CVector::zeros(total),
    };
    let start = Instant::now();
    let sol = ctx.split(&f, &w, tau, &xi)?;
    run.stage("split", start);
    if !(step > 0.0) || ((step * run.nt() as f64) - (step * run.nt() as f64).round()).abs() > 1e-9 {
        return Err(CliError::Input(format!(
            "estimate step {step} is not a multiple of the grid spacing"
        )));
    }
    // Each reference time needs the following period inside the window.
    let (lo, hi) = (w.t0(), w.t1() - 1.0);
    let count = ((hi - lo) / step + 1e-9).floor().max(0.0) as usize;
    let taus: Vec<f64> = (0..=count).map(|k| lo + k as f64 * step).collect();
    let start = Instant::now();
    let rows = ctx.estimate(&sol.v_part, &f, &taus)?;
    run.stage("estimate", start);
    let path = run.path("u.csv");
    write_path(&path, &run.id, "u", &sol.u_part)?;
    let path = run.path("v.csv");
    write_path(&path, &run.id, "v", &sol.v_part)?;
    let path = run.path("coefficients.csv");
    write_path(&path, &run.id, "c", &sol.coefficients)?;
    let path = run.path("estimate.csv");
    let header: Vec<String> = ["tau", "lhs", "rhs", "ratio"].iter().map(|s| s.to_string()).collect();
    let mut table = Table::create(&path, &run.id, &header)?;
    for r in &rows {
        table.row(&[num(r.tau), num(r.lhs), num(r.rhs), num(r.ratio)])?;
    }
    table.finish()?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).filter(|r| r.is_finite()).collect();
    let hi = ratios.iter().copied().fold(f64::NAN, f64::max);
    let lo = ratios.iter().copied().fold(f64::NAN, f64::min);
    let bound = 2.0 * run.tol.rem;
    run.summary = json!({
        "window": [w.t0(), w.t1()],
        "tau": tau,
        "residual": sol.residual,
        "residual_bound": bound,
        "tail": sol.tail,
        "ratio_min": lo,
        "ratio_max": hi,
    });
    println!(
        "residual {:.3e}  tail {:.3e}  ratio in [{lo:.4e}, {hi:.4e}]",
        sol.residual, sol.tail
    );
    if sol.residual > bound {
        run.failure = Some(format!("split residual {:.3e} exceeds {bound:.1e}", sol.residual));
    }
    Ok(())
}

const ASYM_RESIDUAL: f64 = 1e-7;

fn asym(run: &mut Run, args: &ForcingArgs, window: Option<(f64, f64)>, tau: f64) -> Result<(), CliError> {
    let ctx = run.context()?;
    let (f, support) = forcing(args, run.spec.dimension)?;
    let w = window_for(window, support, 2.0, run.nt())?;
    let start = Instant::now();
    let e = ctx.asymptotic_difference(&f, &w, tau)?;
    run.stage("asym", start);
    let path = run.path("asym.csv");
    let header: Vec<String> = ["k", "j", "m", "c_re", "c_im"].iter().map(|s| s.to_string()).collect();
    let mut table = Table::create(&path, &run.id, &header)?;
    for &((k, j, m), c) in &e.coefficients {
        table.row(&[k.to_string(), j.to_string(), m.to_string(), num(c.re), num(c.im)])?;
        println!("c[{k},{j},{m}] = {:.10} {:+.10}i", c.re, c.im);
    }
    table.finish()?;
    let path = run.path("difference.csv");
    write_path(&path, &run.id, "d", &e.difference)?;
    run.summary = json!({ "window": [w.t0(), w.t1()], "tau": tau, "residual": e.residual, "coefficients": e.coefficients.len() });
    if e.residual > ASYM_RESIDUAL {
        run.failure = Some(format!("expansion residual {:.3e} exceeds {ASYM_RESIDUAL:.0e}", e.residual));
    }
    Ok(())
}

fn realform(run: &mut Run) -> Result<(), CliError> {
    if !run.spec.real {
        return Err(CliError::Input(
            "the problem is not flagged real; the real form is undefined".into(),
        ));
    }
    let sys = run.chains()?;
    let bundle = projector_bundle(sys);
    let eigs: Vec<PencilEigenvalue> = bundle.system.blocks.iter().map(|b| b.eig.clone()).collect();
    let pairing = renumber(&eigs, true)?;
    let real = real_projector(&bundle, &pairing)?;
    let d = real.dim();
    let header: Vec<String> = real.layout.iter().map(|c| c.label()).collect();
    let path = run.path("r_real.csv");
    let mut table = Table::create(&path, &run.id, &header)?;
    for i in 0..d {
        let row: Vec<String> = (0..d).map(|j| num(real.r_real[(i, j)])).collect();
        table.row(&row)?;
    }
    table.finish()?;
    let layout = json!({
        "run": run.id,
        "manifest": "manifest.json",
        "sigma": pairing.sigma,
        "pairs": pairing.pairs,
        "epsilon0": pairing.epsilon0(),
        "epsilon_pi": pairing.epsilon_sigma1(),
        "zero_blocks": pairing.zero,
        "pi_blocks": pairing.pi,
        "coordinates": header,
        "rephasing_residual": real.rephasing_residual,
        "eigenvalues": eigs.iter().enumerate().map(|(k, e)| eigen_record(k, e)).collect::<Vec<_>>(),
    });
    let path = run.path("layout.json");
    write_json(&path, &layout)?;
    println!(
        "sigma = {}, epsilon0 = {}, epsilon_pi = {}, {} real coordinates",
        pairing.sigma,
        pairing.epsilon0(),
        pairing.epsilon_sigma1(),
        d
    );
    run.summary = json!({ "dim": d, "sigma": pairing.sigma });
    Ok(())
}

const FIT_POWERS: [i32; 5] = [2, 3, 4, 5, 6];

struct ReduceRequest {
    mu: Option<Vec<f64>>,
    taus: Vec<f64>,
    xi_max: f64,
    xi_count: usize,
    trajectory: Option<(f64, f64)>,
    xi0: Option<Vec<f64>>,
}

fn reduce(run: &mut Run, cfg: ManifoldConfig, req: &ReduceRequest) -> Result<(), CliError> {
    if run.spec.nonlinearity.is_none() {
        return Err(floquet_core::error::Error::MissingNonlinearity.into());
    }
    let ctx = Arc::new(run.context()?);
    let map = ManifoldMap::new(ctx, cfg)?;
    let mu = req.mu.clone().unwrap_or_else(|| map.mu0());
    let m = map.dim();
    let n = run.spec.dimension;
    if req.xi_count < 2 {
        return Err(CliError::Input("xi-count must be at least 2".into()));
    }
    let grid: Vec<f64> = (0..req.xi_count)
        .map(|i| -req.xi_max + 2.0 * req.xi_max * i as f64 / (req.xi_count - 1) as f64)
        .collect();
    let mut points: Vec<(f64, CVector)> = Vec::new();
    for &tau in &req.taus {
        for a in 0..m {
            for &s in &grid {
                if a > 0 && s == 0.0 {
                    continue;
                }
                let mut xi = CVector::zeros(m);
                xi[a] = C64::new(s, 0.0);
                points.push((tau, xi));
            }
        }
    }
    let start = Instant::now();
    let solved: Vec<_> = points
        .par_iter()
        .map(|(tau, xi)| map.fixed_point(*tau, &mu, xi).map(|fp| (fp.h(), fp.diagnostics)))
        .collect::<Result<_, _>>()?;
    run.stage("fixed points", start);
    let mut header = vec!["tau".to_string()];
    header.extend(complex_header("xi", m));
    header.extend(complex_header("h", n));
    let path = run.path("h_samples.csv");
    let mut table = Table::create(&path, &run.id, &header)?;
    let mut samples = Vec::new();
    for ((tau, xi), (h, diag)) in points.iter().zip(&solved) {
        let mut row = vec![num(*tau)];
        row.extend(complex_fields(xi));
        row.extend(complex_fields(h));
        table.row(&row)?;
        samples.push(json!({
            "tau": tau,
            "xi": xi.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "iterations": diag.iterations,
            "contraction": diag.contraction,
            "difference": diag.difference,
            "factors": diag.factors,
        }));
    }
    table.finish()?;
    let mut fits = Vec::new();
    if m == 1 {
        let tau = req.taus[0];
        let rows: Vec<(f64, &CVector)> = points
            .iter()
            .zip(&solved)
            .filter(|((t, _), _)| *t == tau)
            .map(|((_, xi), (h, _))| (xi[0].re, h))
            .collect();
        let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        for c in 0..n {
            let ys: Vec<f64> = rows.iter().map(|r| r.1[c].re).collect();
            if ys.iter().all(|y| y.abs() < 1e-14) {
                continue;
            }
            let coeffs = fit_powers(&xs, &ys, &FIT_POWERS)?;
            println!(
                "h{c}(tau = {tau}) ~ {:.6} xi^2 {:+.6} xi^3 {:+.6} xi^4",
                coeffs[0], coeffs[1], coeffs[2]
            );
            fits.push(json!({ "component": c, "tau": tau, "powers": FIT_POWERS, "coefficients": coeffs }));
        }
    }
    let max_contraction = solved.iter().map(|(_, d)| d.contraction).fold(0.0, f64::max);
    let mut diagnostics = json!({
        "run": run.id,
        "manifest": "manifest.json",
        "mu": mu,
        "epsilon": map.cutoff.epsilon,
        "gamma": map.gamma,
        "window_periods": [map.before as f64 / map.nt() as f64, map.after as f64 / map.nt() as f64],
        "max_contraction": max_contraction,
        "samples": samples,
        "fits": fits,
    });
    let mut summary = json!({ "samples": points.len(), "max_contraction": max_contraction });
    if let Some((t0, t1)) = req.trajectory {
        let xi0 = match &req.xi0 {
            Some(v) if v.len() == m => real_vector(v),
            Some(v) => return Err(CliError::Input(format!("xi0 needs {m} entries, got {}", v.len()))),
            None => {
                let mut v = CVector::zeros(m);
                v[0] = C64::new(0.5 * req.xi_max, 0.0);
                v
            }
        };
        let start = Instant::now();
        let traj = integrate_reduced(&map, &mu, &xi0, t0, t1)?;
        run.stage("trajectory", start);
        let mut header = vec!["t".to_string()];
        header.extend(complex_header("xi", m));
        header.extend(complex_header("u", n));
        let path = run.path("trajectory.csv");
        let mut table = Table::create(&path, &run.id, &header)?;
        for ((t, xi), u) in traj.times.iter().zip(&traj.coords).zip(&traj.lifted) {
            let mut row = vec![num(*t)];
            row.extend(complex_fields(xi));
            row.extend(complex_fields(u));
            table.row(&row)?;
        }
        table.finish()?;
        diagnostics["trajectory"] = json!({
            "span": [t0, t1],
            "lift_residual": traj.lift_residual,
            "max_contraction": traj.max_contraction,
        });
        summary["lift_residual"] = json!(traj.lift_residual);
        println!("trajectory lift residual {:.3e}", traj.lift_residual);
        if traj.lift_residual > run.tol.lift {
            run.failure = Some(format!("lift residual {:.3e} exceeds {:.1e}", traj.lift_residual, run.tol.lift));
        }
    }
    let path = run.path("diagnostics.json");
    write_json(&path, &diagnostics)?;
    run.summary = summary;
    Ok(())
}

fn verify(run: &mut Run, seed: u64, paths: usize, epsilon: Option<f64>, gamma: Option<f64>) -> Result<(), CliError> {
    let mut opts = SuiteOptions {
        seed,
        paths,
        ..SuiteOptions::default()
    };
    if let Some(e) = epsilon {
        opts.manifold.epsilon = e;
    }
    opts.manifold.gamma = gamma;
    let start = Instant::now();
    let report = run_suite(&run.spec, &run.cfg, &run.tol, &opts)?;
    run.stage("suite", start);
    let path = run.path("verify.csv");
    let header: Vec<String> = ["check", "value", "tolerance", "passed", "detail"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut table = Table::create(&path, &run.id, &header)?;
    for c in &report.checks {
        table.row(&[
            c.name.clone(),
            num(c.value),
            num(c.tolerance),
            c.passed.to_string(),
            c.detail.clone().unwrap_or_default(),
        ])?;
        println!(
            "{} {:<26} {:>12.3e} <= {:<9.1e}{}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance,
            c.detail.as_deref().map(|d| format!("  {d}")).unwrap_or_default()
        );
    }
    table.finish()?;
    let failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
    run.summary = json!({ "checks": report.checks.len(), "failed": failed });
    if !failed.is_empty() {
        run.failure = Some(format!("{} check(s) failed: {}", failed.len(), failed.join(", ")));
    }
    Ok(())
}
