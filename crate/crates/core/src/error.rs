use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),

    #[error("invalid pose: {0}")]
    Pose(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),

    #[error("image too small for a 3x3 Laplacian: {width}x{height}")]
    ImageTooSmall { width: usize, height: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },

    #[error("invalid relation dictionary: {0}")]
    Dictionary(String),

    #[error("embedding file line {line}: {reason}")]
    Embedding { line: usize, reason: String },

    #[error("empty label set")]
    EmptyLabels,

    #[error("histogram bin-count mismatch: {0} vs {1}")]
    BinMismatch(usize, usize),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("graph error: {0}")]
    Graph(String),

    #[error("unsupported graph schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("query syntax error at byte {offset}: {message}")]
    QuerySyntax { offset: usize, message: String },

    #[error("pddl export error: {0}")]
    Pddl(String),

    #[error("invalid world description: {0}")]
    World(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
