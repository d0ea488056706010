use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("net too large: predicted size {predicted:.3e} exceeds cap {cap} (d={dim}, eps={eps})")]
    NetTooLarge {
        predicted: f64,
        cap: usize,
        dim: usize,
        eps: f64,
    },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    /// A first-order certificate could not be brought below tolerance.
    #[error("certificate violation {violation:.3e} exceeds tolerance {tol:.3e}")]
    Certificate {
        violation: f64,
        tol: f64,
        /// Point of K attaining the violation.
        direction: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
