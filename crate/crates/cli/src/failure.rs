use std::path::PathBuf;

use mismatch_core::Error;

/// Process exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}, line {line}: {message}")]
    ConfigLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Usage(_) | Self::ConfigLine { .. } => ExitCode::Usage,
            Self::Core { source, .. } => classify(source),
        }
    }
}

fn classify(e: &Error) -> ExitCode {
    match e {
        Error::Parameter(_) | Error::Size { .. } => ExitCode::Usage,
        Error::Training(_) | Error::UndefinedAuc => ExitCode::Numeric,
        Error::Image { source, .. } => classify(source),
        _ => ExitCode::Data,
    }
}

/// Attaches a description of the failed step to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, Error> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what(),
            source,
        })
    }
}
