//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised by the enhancement and adaptation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed RIFF/WAVE header or truncated payload.
    #[error("malformed audio file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Well-formed file using a codec or sample format we do not read.
    #[error("unsupported audio format in {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },

    /// Input that makes an operation meaningless (silence, empty clip, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A tensor op produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("training failed at epoch {epoch}, batch {batch}: {reason}")]
    TrainingFailure {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("minimax optimization did not converge: {0}")]
    NonConvergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    /// Checkpoint failed its magic, version or CRC check.
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("infinite divergence: {0}")]
    InfiniteDivergence(String),

    /// Importance weights cannot be normalized (every sample looks like source).
    #[error("degenerate importance weights: {0}")]
    DegenerateWeights(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
