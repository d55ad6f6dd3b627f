//! Wasserstein-distance criteria for Bayesian optimal experimental design.

pub mod bayes;
pub mod error;
pub mod linalg;
pub mod measures;
pub mod models;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod transport;
pub mod utilities;
pub mod wasserstein;

pub use error::{Error, Result};
