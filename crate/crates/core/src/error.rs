//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdemError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("ellipticity violation: {0}")]
    Ellipticity(String),
    #[error("conditioning: {0}")]
    Conditioning(String),
    #[error("solver failed to converge: {0}")]
    Solver(String),
    #[error("classification failed: {0}")]
    Classification(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("stage {stage} failed for (rho={rho}, t={t}, tau={tau}): {source}")]
    Stage {
        stage: &'static str,
        rho: String,
        t: f64,
        tau: f64,
        #[source]
        source: Box<OdemError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OdemError>;
