//! Numerical laboratory for quasi-plurisubharmonic envelopes, Monge-Ampere
//! measures, and Morse-type integrals on discretized flat complex tori.
//!
//! The crate is organized around six layers:
//!
//! * [`grid`], [`field`], [`form`] — the discretized torus, real scalar
//!   fields from finite Fourier data, and Hermitian (1,1)-form fields;
//! * [`calculus`] — i del delbar, eigenvalue fields, mixed discriminants,
//!   wedge and Morse-type integrals, and the torsion-constant estimator;
//! * [`exterior`] — an exact spectral exterior algebra used by the torsion
//!   and integration-by-parts checks;
//! * [`envelope`] — the monotone wide-stencil obstacle solver, the balayage
//!   check, and the exponential-regularization route;
//! * [`ma`] — the Newton/continuation solver for complex Monge-Ampere
//!   equations on the torus;
//! * [`experiments`] + [`config`] — the experiment runners behind the CLI.

pub mod calculus;
pub mod envelope;
pub mod error;
pub mod exterior;
pub mod field;
pub mod form;
pub mod grid;
pub mod herm;
pub mod ma;
pub mod reduce;

pub use error::{Error, Result};

/// Version tag of the normalization conventions baked into this crate
/// (complex derivative, form density, and integral conventions); embedded
/// in every output file.
pub const CONVENTIONS_VERSION: &str = "torus-conventions-1";
