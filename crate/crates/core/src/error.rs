use thiserror::Error;

/// Errors raised across the toolkit. Variants map onto the failure classes the
/// command-line front end turns into exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FwiError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("density bounds error: {0}")]
    Bounds(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),
    #[error("indefinite Hessian: eigenvalue {0} <= -1")]
    Indefinite(f64),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FwiError {
    fn from(e: std::io::Error) -> Self {
        FwiError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for FwiError {
    fn from(e: serde_json::Error) -> Self {
        FwiError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FwiError>;
