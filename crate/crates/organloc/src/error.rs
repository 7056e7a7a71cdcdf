use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] organloc_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), detail: detail.into() }
    }

    /// Process exit code: 1 for bad input or configuration, 2 for failures
    /// while doing the work.
    pub fn exit_code(&self) -> i32 {
        use organloc_core::Error as E;
        match self {
            Error::Config(_) => 1,
            Error::Core(E::InvalidArgument(_) | E::MissingStatistics { .. } | E::OutOfBounds(_)) => 1,
            Error::Core(_) => 2,
            Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } | Error::Format { .. } => 2,
        }
    }
}
