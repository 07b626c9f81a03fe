use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// `Numerical` variants are the only ones that map to CLI exit code 2;
/// everything else is treated as a user/input error (exit code 1).
#[derive(Debug, Error)]
pub enum QcompError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("numerical degeneracy: {0}")]
    Numerical(String),
}

impl QcompError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        QcompError::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            QcompError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, QcompError>;
