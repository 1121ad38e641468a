use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data contains values the computation cannot accept.
    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An integrated state left the finite range.
    #[error("state diverged: {state:?}")]
    Divergence { state: Vec<f64> },

    #[error("training diverged in stage {stage} at epoch {epoch}")]
    TrainingDivergence { stage: u8, epoch: usize },

    #[error("controller synthesis failed: {0}")]
    Synthesis(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
