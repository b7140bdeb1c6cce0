use std::path::PathBuf;

/// Problems with input or output files. Every variant carries the path, and
/// row-level problems carry the 1-based line number.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: file is empty", path.display())]
    EmptyFile { path: PathBuf },
    #[error("{}:1: malformed header {header:?}, expected \"<count> <dim>\"", path.display())]
    MalformedHeader { path: PathBuf, header: String },
    #[error("{}:{line}: {detail}", path.display())]
    MalformedRow { path: PathBuf, line: usize, detail: String },
    #[error("{}:{line}: expected a source and a target token, found {found} tokens", path.display())]
    MalformedLine { path: PathBuf, line: usize, found: usize },
    #[error("{}: dictionary has no entries", path.display())]
    EmptyDictionary { path: PathBuf },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &std::path::Path, detail: impl Into<String>) -> Self {
        DataError::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

/// Exit statuses of the `dsalign` binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Core(#[from] dsalign_core::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        use dsalign_core::Error as E;
        match self {
            AppError::Usage(_) => exit::USAGE,
            AppError::Data(_) => exit::DATA,
            AppError::Core(E::InvalidArgument(_)) => exit::USAGE,
            AppError::Core(E::DimensionMismatch { .. } | E::EmptyDictionary) => exit::DATA,
            AppError::Core(_) => exit::NUMERICAL,
        }
    }
}

pub type AppResult<T> = std::result::Result<T, AppError>;
