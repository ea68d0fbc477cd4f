//! Learnable-cost graph edit distance.
//!
//! The crate bundles exact GED oracles, assignment solvers (Hungarian and
//! Gumbel-Sinkhorn), a small reverse-mode autodiff engine, a multi-scale GIN
//! encoder, the differentiable matching model with learnable edit costs, its
//! training regimes, evaluation metrics and node-level cost explanations.

pub mod assignment;
pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod eval;
pub mod gedan;
pub mod ged;
pub mod graph;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
