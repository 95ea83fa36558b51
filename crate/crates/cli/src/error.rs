use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("{failed} of {total} samples failed")]
    PartialGeneration { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] spinodal::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 I/O, 2 partial generation, 3 shape or format,
    /// 4 numerical failure, 5 configuration.
    pub fn exit_code(&self) -> i32 {
        use spinodal::Error as E;
        match self {
            CliError::Io { .. } => 1,
            CliError::PartialGeneration { .. } => 2,
            CliError::Format(_) | CliError::Shape(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Config(_) => 5,
            CliError::Core(e) => match e {
                E::DimensionMismatch { .. } | E::ShapeMismatch(..) => 3,
                E::ImaginaryResidueTooLarge { .. } | E::NumericalBlowup { .. } | E::NonFiniteLoss { .. } => 4,
                E::InvalidGrid(_) | E::InvalidParams(_) => 5,
            },
        }
    }
}
