use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("backward: root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("obj line {line}: {msg}")]
    Obj { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("non-manifold edge ({0}, {1}) shared by {2} faces")]
    NonManifold(usize, usize, usize),

    #[error("mesh has zero total area")]
    ZeroArea,

    #[error("missing landmark set `{0}`")]
    MissingLandmark(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("rank mismatch: expected {expected} coefficients for {what}, got {got}")]
    Rank {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite loss at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint fingerprint mismatch: file has {found}, expected {expected}")]
    Fingerprint { expected: String, found: String },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
