use std::path::PathBuf;

use ncam_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NcamError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Precondition(String),

    #[error("{context}: malformed data at byte offset {offset}: {msg}")]
    Malformed {
        context: String,
        offset: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown image id {0}")]
    UnknownId(usize),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },
}

impl NcamError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = NcamError> = std::result::Result<T, E>;
