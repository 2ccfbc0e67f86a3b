use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("degenerate mesh: all vertices coincide")]
    DegenerateMesh,
    #[error("grid of {grid} cells does not divide image side {side}")]
    BadGrid { grid: usize, side: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training vectors")]
    EmptyInput,
    #[error("empty view set")]
    EmptySet,
    #[error("query class has no other members")]
    SingletonClass,
    #[error("no query had a class with at least two members")]
    NoValidQueries,
    #[error("manifest lists no shapes")]
    EmptyManifest,
    #[error("every shape in the manifest failed to build")]
    AllShapesFailed,
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("index holds no shapes")]
    EmptyIndex,
    #[error("bad configuration: {0}")]
    BadSpec(String),
    #[error("unknown shape id {0:?}")]
    UnknownShape(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("cannot bind {addr}: {msg}")]
    Bind { addr: String, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
