use std::path::PathBuf;

/// Errors produced by network construction, pruning, analysis and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target density {target} is below the minimum density {rho_min} (parametrized layers / total parameters)")]
    DensityBelowMinimum { target: f64, rho_min: f64 },

    #[error("degenerate transition distribution: all {len} candidate weights are zero")]
    DegenerateDistribution { len: usize },

    #[error("path accumulator overflow in layer {layer}; use a shallower/narrower network or the log-domain objective")]
    Overflow { layer: usize },

    #[error("operation requires dense layers, layer {layer} is convolutional")]
    DenseOnly { layer: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("exhaustive search too large: {candidates} candidate masks exceeds the limit of {limit}")]
    SearchTooLarge { candidates: f64, limit: f64 },

    #[error("walk budget exhausted after {walks} walks ({active} of {target} parameters active)")]
    WalkLimit { walks: usize, active: usize, target: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
