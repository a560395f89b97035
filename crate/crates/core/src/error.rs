use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("bag has {instances} instances but the window needs {window}")]
    BagTooShort { instances: usize, window: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("AUROC needs both classes (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bad magic bytes {0:?}, expected \"SMB1\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    BadVersion(u16),

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("corrupt dataset: {0}")]
    Corrupt(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
