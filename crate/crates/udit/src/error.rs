use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] udit_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 2 configuration, 3 data, 4 checkpoint or
    /// shape mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use udit_core::Error as C;
        match self {
            Error::Config(_) | Error::Core(C::Config(_)) => 2,
            Error::Data(_) | Error::Core(C::Data(_)) => 3,
            Error::Checkpoint(_) | Error::Core(C::Shape(_)) => 4,
            _ => 1,
        }
    }
}
