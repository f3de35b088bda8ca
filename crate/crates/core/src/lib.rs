//! Floquet machinery for `u' + A(t) u = f` with one-periodic `A(t)`:
//! pencil spectra and Jordan chains, pointwise spectral projectors,
//! splitting into a finite system plus a dichotomy remainder, the real form
//! for real operators, and center manifold reduction.

pub mod bundled;
pub mod center_manifold;
pub mod config;
pub mod error;
pub mod expr;
pub mod format;
pub mod fourier;
pub mod linalg;
pub mod path;
pub mod pencil;
pub mod poly;
pub mod problem;
pub mod projector;
pub mod propagator;
pub mod realform;
pub mod scalar;
pub mod splitting;
pub mod verify;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type RMatrix = DMatrix<f64>;

/// Exact coefficient ring used by parsed problem files.
pub type ExactScalar = scalar::ExactComplex;
/// Trigonometric polynomial with exact coefficients.
pub type ExactTrigPoly = poly::TrigPoly<scalar::ExactComplex>;
/// Trigonometric polynomial with floating point coefficients.
pub type NumericTrigPoly = poly::TrigPoly<Complex64>;
/// Nonlinearity polynomial with exact coefficients.
pub type ExactPoly = poly::MultiPoly<scalar::ExactComplex>;
/// Nonlinearity polynomial with floating point coefficients.
pub type NumericPoly = poly::MultiPoly<Complex64>;
