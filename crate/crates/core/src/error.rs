use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("inverse transform left an imaginary residue of {residue:e} (limit 1e-6)")]
    ImaginaryResidueTooLarge { residue: f64 },

    #[error("numerical blowup at step {step}: {detail}")]
    NumericalBlowup { step: usize, detail: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

impl Error {
    pub fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
