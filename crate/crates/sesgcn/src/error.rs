use std::path::{Path, PathBuf};

/// Everything the file formats and the CLI can fail with.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] sesgcn_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Usage(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        AppError::Json {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        AppError::Parse {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// 1 for bad input or configuration, 2 for faults while running.
    pub fn exit_code(&self) -> i32 {
        use sesgcn_core::Error as E;
        match self {
            AppError::Core(E::NumericFault { .. } | E::Diverged { .. } | E::EmptyGradient) => 2,
            AppError::Core(_) => 1,
            AppError::Io { .. } => 2,
            AppError::Parse { .. } | AppError::Json { .. } | AppError::Schema(_) | AppError::Usage(_) => 1,
        }
    }
}
