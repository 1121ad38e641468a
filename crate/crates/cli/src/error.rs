use std::path::{Path, PathBuf};
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },

    #[error("missing {}: run `obliq {producer}` with the same config and --out first", .path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("{} is stale: {reason}", .path.display())]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{task} failed: {msg}")]
    Task { task: String, msg: String },

    #[error("{0} verification check(s) failed")]
    Verify(usize),

    #[error(transparent)]
    Core(#[from] obliq_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        use obliq_core::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::MissingArtifact { .. } | CliError::StaleArtifact { .. } => "dependency",
            CliError::Io { .. } => "io",
            CliError::Task { .. } => "task",
            CliError::Verify(_) => "verify",
            CliError::Core(e) => match e {
                E::Usage(_) => "usage",
                E::Data(_) => "data",
                E::Numerical(_) | E::Divergence { .. } | E::TrainingDivergence { .. } => "numerical",
                E::Synthesis(_) => "task",
                E::Io(_) => "io",
                E::Format(_) => "format",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" | "usage" => 2,
            "dependency" => 3,
            "data" | "format" => 4,
            "numerical" => 5,
            "task" => 6,
            "io" => 7,
            "verify" => 8,
            _ => 1,
        }
    }
}
