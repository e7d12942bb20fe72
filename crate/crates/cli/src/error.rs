use std::path::PathBuf;

/// Failure of a command, mapped onto a stable process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing metadata: {0}")]
    MissingMetadata(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("gradient check failed: max relative error {0:e}")]
    GradCheck(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingMetadata(_) => 4,
            CliError::Generation(_) => 5,
            CliError::GradCheck(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<segros::Error> for CliError {
    fn from(e: segros::Error) -> Self {
        match e {
            segros::Error::Generation(m) => CliError::Generation(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
