use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Gram matrix {which} is not symmetric positive definite")]
    GramNotSpd { which: &'static str },

    #[error("nonlinearity is not tangent to zero at mu0: component f{component} contains monomial {monomial}")]
    TangencyViolation { component: usize, monomial: String },

    #[error("problem is not real: {0}")]
    NotReal(String),

    #[error("integration failed at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("fundamental matrix is numerically singular at t = {t} (condition {condition:e})")]
    SingularFundamental { t: f64, condition: f64 },

    #[error("eigenvalue {lambda} lies within {distance:e} of the strip boundary")]
    StripBoundary { lambda: String, distance: f64 },

    #[error("eigenvalue cluster near {lambda} is ill conditioned (condition {condition:e})")]
    IllConditionedCluster { lambda: String, condition: f64 },

    #[error("Jordan chain construction failed: {0}")]
    ChainConstruction(String),

    #[error("Jordan chain residual {residual:e} exceeds tolerance {tolerance:e}")]
    ChainResidual { residual: f64, tolerance: f64 },

    #[error("adjoint chain structure mismatch: {0}")]
    AdjointMismatch(String),

    #[error("Gram block is singular (condition {condition:e})")]
    SingularGram { condition: f64 },

    #[error("biorthogonality defect {defect:e} exceeds tolerance {tolerance:e}")]
    BiorthogonalityDefect { defect: f64, tolerance: f64 },

    #[error("eigenvalue {0} has no conjugate partner in the strip")]
    UnpairedEigenvalue(String),

    #[error("could not choose real chain representatives: {0}")]
    Rephasing(String),

    #[error("{what} residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { what: &'static str, residual: f64, tolerance: f64 },

    #[error("forcing tail outside the window contributes {estimate:e} (tolerance {tolerance:e})")]
    TailTruncation { estimate: f64, tolerance: f64 },

    #[error("solution violates the growth bounds of the strip: {0}")]
    GrowthPrecondition(String),

    #[error("time {tau} is not a grid point of the window")]
    OffGrid { tau: f64 },

    #[error("fixed-point iteration is not contracting (factor {factor:.3} after {iterations} iterations)")]
    NonContraction { factor: f64, iterations: usize },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last difference {difference:e})")]
    MaxIterations { iterations: usize, difference: f64 },

    #[error("state left the cutoff region: |u| = {norm:e} exceeds epsilon = {epsilon:e}")]
    CutoffExit { norm: f64, epsilon: f64 },

    #[error("parameter {0} lies outside the parameter box")]
    ParameterOutOfRange(String),

    #[error("no nonlinearity is defined for this problem")]
    MissingNonlinearity,

    #[error("resolvent is singular at xi = {xi}")]
    SingularResolvent { xi: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Parse-class errors come from malformed or inconsistent input files.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DimensionMismatch(_)
                | Error::GramNotSpd { .. }
                | Error::TangencyViolation { .. }
                | Error::NotReal(_)
                | Error::Config(_)
        )
    }
}
