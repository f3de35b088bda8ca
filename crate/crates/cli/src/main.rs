//! `floquet`: command-line front end for floquet-core.

mod commands;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use floquet_core::config::Tolerances;
use floquet_core::error::Error;

#[derive(Debug)]
pub enum CliError {
    /// Malformed problem file, flags or input data.
    Input(String),
    Numeric(String),
    /// The computation ran but a checked property failed.
    Property(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
            CliError::Property(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Property(m) => write!(f, "property check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let input = e.is_input_error()
            || matches!(
                e,
                Error::OffGrid { .. } | Error::ParameterOutOfRange(_) | Error::MissingNonlinearity
            );
        if input {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "floquet",
    version,
    about = "Floquet spectra, projectors, splitting and center manifolds of periodic systems"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem file, or the name of a bundled example (e1, e2, e3, e4, e4_pi, e5, e5_periodic, mathieu, scalar_one).
    #[arg(long, global = true, default_value = "e1")]
    pub problem: String,
    /// Grid points per period.
    #[arg(long, global = true)]
    pub grid_nt: Option<usize>,
    /// RK4 steps per grid interval.
    #[arg(long, global = true, default_value_t = 16)]
    pub substeps: usize,
    /// Time window `t0:t1` on the grid.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// Weight exponent of the center-manifold norms.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Cutoff radius of the center-manifold nonlinearity.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "floquet-out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub tol: TolFlags,
}

#[derive(Debug, Args)]
pub struct TolFlags {
    #[arg(long = "tol-margin", global = true)]
    margin: Option<f64>,
    #[arg(long = "tol-cluster", global = true)]
    cluster: Option<f64>,
    #[arg(long = "tol-rank", global = true)]
    rank: Option<f64>,
    #[arg(long = "tol-chain", global = true)]
    chain: Option<f64>,
    #[arg(long = "tol-biorth", global = true)]
    biorth: Option<f64>,
    #[arg(long = "tol-pointwise", global = true)]
    pointwise: Option<f64>,
    #[arg(long = "tol-proj", global = true)]
    proj: Option<f64>,
    #[arg(long = "tol-comm", global = true)]
    comm: Option<f64>,
    #[arg(long = "tol-rem", global = true)]
    rem: Option<f64>,
    #[arg(long = "tol-fp", global = true)]
    fp: Option<f64>,
    #[arg(long = "tol-lift", global = true)]
    lift: Option<f64>,
    #[arg(long = "tol-capture", global = true)]
    capture: Option<f64>,
    #[arg(long = "tol-liouville", global = true)]
    liouville: Option<f64>,
    #[arg(long = "tol-residual", global = true)]
    residual: Option<f64>,
}

impl TolFlags {
    pub fn apply(&self) -> Result<Tolerances, CliError> {
        let mut tol = Tolerances::default();
        let flags = [
            ("margin", self.margin),
            ("cluster", self.cluster),
            ("rank", self.rank),
            ("chain", self.chain),
            ("biorth", self.biorth),
            ("pointwise", self.pointwise),
            ("proj", self.proj),
            ("comm", self.comm),
            ("rem", self.rem),
            ("fp", self.fp),
            ("lift", self.lift),
            ("capture", self.capture),
            ("liouville", self.liouville),
            ("residual", self.residual),
        ];
        for (name, value) in flags {
            if let Some(v) = value {
                tol.set(name, v)?;
            }
        }
        Ok(tol)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Floquet exponents in the strip with multiplicities and residuals.
    Spectrum,
    /// Normalized Jordan chains and adjoint chains on one period.
    Chains,
    /// Split a sampled trajectory into its P and Q parts.
    Project {
        /// CSV with `t` and n real or n (re, im) columns on consecutive grid points.
        #[arg(long)]
        input: PathBuf,
    },
    /// Solve u' + A(t)u = f by the spectral splitting.
    Split {
        #[command(flatten)]
        forcing: ForcingArgs,
        /// Reference time of the initial coefficients.
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<f64>,
        /// Initial coefficients at tau, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        xi: Option<String>,
        /// Spacing of the reference times in the estimate report.
        #[arg(long, default_value_t = 0.5)]
        estimate_step: f64,
    },
    /// Expansion of the two-weight difference in the Floquet solutions.
    Asym {
        #[command(flatten)]
        forcing: ForcingArgs,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tau: f64,
    },
    /// Real reduced matrix and coordinate layout of a real problem.
    Realform,
    /// Samples of the center manifold and reduced trajectories.
    Reduce {
        /// Parameter value, comma separated; defaults to mu0.
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<String>,
        /// Reference times, comma separated.
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        taus: String,
        /// Largest |xi| on the sample grid.
        #[arg(long, default_value_t = 0.05)]
        xi_max: f64,
        /// Samples per coordinate axis.
        #[arg(long, default_value_t = 11)]
        xi_count: usize,
        /// Span `t0:t1` of a reduced trajectory.
        #[arg(long, allow_hyphen_values = true)]
        trajectory: Option<String>,
        /// Initial reduced coordinates of the trajectory, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        xi0: Option<String>,
    },
    /// Run the full property suite; exits with 4 on any failure.
    Verify {
        /// Random paths in the commutation check.
        #[arg(long, default_value_t = 20)]
        paths: usize,
    },
}

#[derive(Debug, Args)]
pub struct ForcingArgs {
    /// Forcing CSV (`t` plus n real or n (re, im) columns); interpolated
    /// linearly and zero outside its time range.
    #[arg(long)]
    pub forcing: Option<PathBuf>,
    /// Unit forcing `a:b[:component]` when no CSV is given.
    #[arg(long, default_value = "0:1:0", allow_hyphen_values = true)]
    pub unit_box: String,
}

fn configure_threads() {
    if let Some(n) = std::env::var("FLOQUET_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    configure_threads();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("floquet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
