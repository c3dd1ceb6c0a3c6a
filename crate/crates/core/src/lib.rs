//! Multiplicity thresholds and numerical experiments for critical
//! p-Laplacian and (p,q)-Laplacian Dirichlet problems.

pub mod bracket;
pub mod config;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod json;
pub mod params;
pub mod mesh;
pub mod quadrature;
pub mod sobolev;
pub mod sparse;
pub mod thresholds;
pub mod variational;

pub use error::{Error, Result};
pub use params::{critical_exponent, HypothesisConstants, Model, ProblemParams};
