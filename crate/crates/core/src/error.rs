use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which tensor of a layer an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

impl std::fmt::Display for TensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorKind::Weight => f.write_str("weight"),
            TensorKind::Bias => f.write_str("bias"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),

    /// Layers are 1-indexed, matching the usual W_1..W_M naming.
    #[error("shape mismatch at layer {layer} ({kind}): expected {expected:?}, got {actual:?}")]
    Shape {
        layer: usize,
        kind: TensorKind,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer count mismatch: expected {expected}, got {actual}")]
    LayerCount { expected: usize, actual: usize },

    #[error("non-finite {kind} entry at layer {layer}, flat index {index}: {value}")]
    NonFinite {
        layer: usize,
        kind: TensorKind,
        index: usize,
        value: f32,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("fit failed for object {object}, view {view}: {source}")]
    FitFailed {
        object: usize,
        view: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("search space too large: {candidates} candidates exceeds limit {limit}")]
    SizeGuard { candidates: u128, limit: u128 },

    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("format version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
