use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate classes: need at least one positive and one negative label")]
    DegenerateClasses,
    #[error("degenerate spectrum: input has no variance")]
    DegenerateSpectrum,
    #[error("degenerate direction: class means are identical")]
    DegenerateDirection,
    #[error("degenerate difficulty: all difficulties are equal")]
    DegenerateDifficulty,
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weight vector is not unit norm (norm {0})")]
    NotUnit(f64),
    #[error("layer {layer} out of range (layer count {layer_count})")]
    LayerOutOfRange { layer: usize, layer_count: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("manifest/slab mismatch: {0}")]
    ManifestSlabMismatch(String),
    #[error("truncated slab {path}: expected {expected} bytes, found {found}")]
    TruncatedSlab {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("unknown store format version {0}")]
    UnknownFormatVersion(u32),
    #[error("empty filter result")]
    EmptyFilter,
    #[error("empty disagreement set")]
    EmptyDisagreement,

    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("{malformed} of {total} rows malformed (more than 10%)")]
    TooManyMalformed { malformed: usize, total: usize },

    #[error("uninformative gap: |ceil - floor| = {0} is below epsilon")]
    UninformativeGap(f64),
    #[error("all CCS restarts diverged (losses {0:?})")]
    AllRestartsDiverged(Vec<f64>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
