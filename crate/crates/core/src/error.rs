use thiserror::Error;

use crate::mesh::CellId;

/// Errors raised by the mesh, discretization, estimation and AFEM layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cell {0} is not a leaf of the current mesh")]
    NotALeaf(CellId),
    #[error("unknown cell id {0}")]
    UnknownCell(CellId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("refinement exceeded the level budget of {0}")]
    LevelBudget(u32),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("reduced stiffness matrix is not positive definite (p^T A p = {0:e})")]
    NotPositiveDefinite(f64),
    #[error(
        "solver did not converge: relative residual {residual:e} after {iterations} iterations"
    )]
    SolverDiverged { residual: f64, iterations: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("gradient requested at the singular point ({0}, {1})")]
    SingularPoint(f64, f64),
    #[error("effectivity undefined for zero energy error")]
    UndefinedEffectivity,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
