//! Numerical laboratory for nonuniform dependence on initial data in 2D
//! compressible gas dynamics.
//!
//! The crate builds explicit high/low-frequency approximate solutions of the
//! isentropic Euler system in `(rho, u, v, h)` variables, checks their exact
//! identities and residual scaling laws, evolves the same initial data with a
//! pseudospectral solver and measures how solutions from converging data
//! separate in `H^s`.

pub mod ansatz;
pub mod cutoffs;
pub mod error;
pub mod experiment;
pub mod residual;
pub mod separable;
pub mod sobolev;
pub mod solver;
pub mod spectral;
pub mod state;

pub use error::{LabError, Result};
