use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("mesh topology error: {0}")]
    Topology(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("space error: {0}")]
    Space(String),
    #[error("point ({x}, {y}) lies outside element {element}")]
    PointOutside { element: usize, x: f64, y: f64 },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("unsupported quadrature degree {0} (maximum is 20)")]
    QuadratureDegree(usize),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
