use std::path::PathBuf;

/// Errors raised by the file formats and command runners.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("invalid input: {0}")]
    Invalid(#[source] robustmdp_core::Error),
    #[error("solver failed: {0}")]
    Solver(#[source] robustmdp_core::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for bad input, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Solver(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
