//! Gauge transformation and pseudospectral solvers for KdV-type equations with
//! variable coefficients.

pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod fit;
pub mod gauge;
pub mod io;
pub mod littlewood_paley;
pub mod quadrature;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
