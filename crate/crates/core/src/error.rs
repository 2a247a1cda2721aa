use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error("frame sequence has a gap: index {missing} is missing")]
    FrameGap { missing: usize },

    #[error("frame {path} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameDims { path: PathBuf, got_w: usize, got_h: usize, want_w: usize, want_h: usize },

    #[error("not a checkpoint (bad magic)")]
    NotACheckpoint,

    #[error("checkpoint truncated while reading {0}")]
    TruncatedCheckpoint(String),

    #[error("checkpoint blob `{name}` has shape {got:?}, expected {want:?}")]
    BlobShape { name: String, got: Vec<usize>, want: Vec<usize> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
