use std::path::Path;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("cannot parse configuration: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] skillform::Error),

    #[error("cannot write table: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(key: &str, reason: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for IO, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Toml(_) => 2,
            CliError::Io { .. } | CliError::Csv(_) => 3,
            CliError::Core(e) if e.is_config() || matches!(e, skillform::Error::Format(_)) => 2,
            CliError::Core(e) if e.is_io() => 3,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}
