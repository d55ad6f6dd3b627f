//! Experiment runner for Wasserstein-based optimal experimental design:
//! utility grids, the empirical-prior convergence study, ad-hoc distances
//! and transport maps, and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiments;
pub mod ops;
pub mod svg;

pub use config::{Config, Criterion, Experiment};
pub use error::{CliError, CliResult};
