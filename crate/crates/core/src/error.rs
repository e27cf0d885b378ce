use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("style library construction failed: {0}")]
    Library(String),

    #[error("missing upstream artifact {path} ({reason}): run `{command}` first")]
    MissingArtifact {
        path: PathBuf,
        reason: String,
        command: String,
    },

    #[error("numerical divergence at epoch {epoch} (step size {step_size}): {detail}")]
    Divergence {
        epoch: usize,
        step_size: f64,
        detail: String,
    },

    #[error("undefined boundary distance: {0}")]
    EmptyMask(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::Library(_) | Error::EmptyMask(_) => 2,
            Error::MissingArtifact { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::Io { .. } => 1,
        }
    }
}
