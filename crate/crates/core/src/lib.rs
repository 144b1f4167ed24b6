//! Distributed Lagrangian methods for consensus-constrained optimization over
//! an undirected agent network, with spectral certification tools.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod multipliers;
pub mod network;
pub mod oracle;
pub mod problem;
pub mod solvers;

pub use error::{Error, Result};
