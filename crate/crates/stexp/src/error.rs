use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: field `{field}`: {reason}", path.display())]
    Format {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("grad check failed: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Core(#[from] stexp_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(
        path: impl AsRef<Path>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 1 for invalid input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use stexp_core::Error as C;
        match self {
            Error::Format { .. } | Error::Config(_) | Error::Usage(_) | Error::Json { .. } => 1,
            Error::Core(
                C::Shape { .. }
                | C::InvalidArgument { .. }
                | C::InvalidSlide { .. }
                | C::Leakage(_),
            ) => 1,
            Error::Core(C::UnknownParam(_)) => 1,
            Error::Io { .. } | Error::GradCheck(_) | Error::Core(_) => 2,
        }
    }
}
