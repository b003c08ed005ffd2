use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node id {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("random regular graph generation failed after {attempts} attempts (n={n}, d={d})")]
    GenerationFailed { n: usize, d: usize, attempts: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("graph too large for exhaustive search: {n} nodes (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("gradient requested of a non-scalar output with shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },

    #[error(
        "model architecture fingerprint mismatch: expected {expected:016x}, found {found:016x}"
    )]
    FingerprintMismatch { expected: u64, found: u64 },

    #[error("reference optimum missing for instance {0}")]
    MissingReference(String),

    #[error("reference value must be positive, got {0}")]
    NonPositiveReference(f64),

    #[error("unsupported format version {found} in {what} (this build reads up to {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
