use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy header: {0}")]
    MalformedHeader(String),

    #[error("unsupported npy dtype {0:?} (expected '<f4' or '<f8')")]
    UnsupportedDtype(String),

    #[error("fortran-ordered npy arrays are not accepted")]
    FortranOrder,

    #[error("expected array rank {expected}, found rank {found}")]
    RankError { expected: &'static str, found: usize },

    #[error("npy payload holds {found} elements but the header declares {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at flat index {index}")]
    NonFiniteData { index: usize },

    #[error("empty feature-map batch")]
    EmptyBatch,

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive degree {value:e} at vertex {index}")]
    NonPositiveDegree { index: usize, value: f64 },

    #[error("eigendecomposition did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("embedding size {n} outside [1, {channels}]")]
    BadN { n: usize, channels: usize },

    #[error("degenerate spectrum: eigenvalue gap {gap:e} below threshold")]
    DegenerateSpectrum { gap: f64 },

    #[error("channel {index} has (near) zero norm")]
    DegenerateChannel { index: usize },

    #[error("descent diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
