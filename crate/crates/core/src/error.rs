use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("leakage error: {0}")]
    Leakage(String),

    #[error("load error in {}: {message}", file.display())]
    Load { file: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Load {
            file: file.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) => exit::CONFIG,
            Error::Load { .. }
            | Error::InsufficientData(_)
            | Error::Label(_)
            | Error::Leakage(_)
            | Error::Checkpoint(_) => exit::DATA,
            Error::Numeric(_) | Error::Dimension(_) => exit::NUMERIC,
            Error::Contract(_) | Error::Io { .. } | Error::Serde(_) => exit::FAILURE,
        }
    }
}

/// Exit codes used by the `limbrec` binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const CHECK_FAILED: i32 = 5;
    pub const REFUSED: i32 = 6;
}
