//! Entropy-stable simulation of degenerate multicomponent capillary flow.

pub mod assembly;
pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod quadrature;
pub mod selftest;
pub mod solver;

pub use constitutive::{validate_assumptions, AssumptionReport, CoefficientValues, Model, ModelParams};
pub use error::{Error, Result};
