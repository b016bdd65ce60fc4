use std::path::PathBuf;

use crate::corpus::ClipId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("duplicate clip id `{0}`")]
    DuplicateClip(ClipId),

    #[error("{source_name}:{line}: unknown clip id `{id}`")]
    UnknownClip {
        source_name: String,
        line: usize,
        id: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("audio decode error: {0}")]
    Decode(String),

    #[error("signal of {len} samples is shorter than one window of {window} samples")]
    TooShort { len: usize, window: usize },

    #[error("k-means needs at least {k} rows, got {rows}")]
    InsufficientData { rows: usize, k: usize },

    #[error("clip `{0}` has no tags known to the tag matrix")]
    NoTags(ClipId),

    #[error("no embedding for clip `{0}`")]
    MissingEmbedding(ClipId),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        source_name: impl Into<String>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}
