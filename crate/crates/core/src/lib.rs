//! Sensitivity bounds for fairness parity metrics under measurement bias.
//!
//! Causal assumptions are written as a DAG plus probabilistic constraints,
//! compiled into polynomial programs over the response-function simplex
//! parameterization, and bounded with a spatial branch-and-bound solver.

pub mod compile;
pub mod config;
pub mod error;
pub mod event;
pub mod graph;
pub mod io;
pub mod lp;
pub mod metrics;
pub mod oracles;
pub mod poly;
pub mod program;
pub mod relax;
pub mod scalar;
pub mod scheme;
pub mod solver;
pub mod table;

pub use error::{Error, Result};
pub use graph::{parse_edgelist, Dag, NodeRoleMap};
pub use scalar::Scalar;

/// Exact rational used for all symbolic coefficients.
pub type Rational = num_rational::BigRational;
/// Polynomial over scheme coordinates with exact coefficients.
pub type Polynomial = poly::PolynomialExpr;

/// Engine version recorded in result documents.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
