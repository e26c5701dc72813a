use thiserror::Error;

use crate::network::EdgeId;
use crate::solver::SolverResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dangling endpoints, malformed routes, unknown ids, shape mismatches.
    #[error("structural error: {0}")]
    Structural(String),

    /// A field value violates its invariant (non-positive capacity, duplicate id, ...).
    #[error("attribute error: {0}")]
    Attribute(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "infeasible scenario: edge {edge} needs {required} capacity at minimum travel times but has {capacity}"
    )]
    Infeasible {
        edge: EdgeId,
        required: f64,
        capacity: f64,
    },

    /// The iterate with the smallest KKT residual is kept in `best`.
    #[error("solver did not converge after {iterations} iterations (max KKT residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<SolverResult>,
    },

    #[error("oracle scope exceeded: {0}")]
    OracleScope(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
