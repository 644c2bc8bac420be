use std::path::PathBuf;

/// Errors produced by the detection pipeline and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed but violated the format contract. `detail` names the
    /// offending field or line.
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
