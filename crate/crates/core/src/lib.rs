//! Spectral tools for the stability of monotone shear flows in a channel.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: Chebyshev collocation, quadrature, norms, Helmholtz solves.
//! - [`profile`]: background shear profiles, their heat evolution and bounds.
//! - [`resolvent`]: Orr–Sommerfeld resolvent problems and their decomposition.
//! - [`scan`]: parameter sweeps of resolvent norm ratios with power-law fits.
//! - [`linear`]: time stepping of a single Fourier mode of the linearized system.
//! - [`nonlinear`]: the full pseudospectral perturbation system and threshold probe.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod linear;
pub mod linalg;
pub mod nonlinear;
pub mod profile;
pub mod resolvent;
pub mod scan;

pub use error::{Error, Result};
