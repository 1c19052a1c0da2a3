use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LstdError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value while generating step {step}")]
    Generation { step: usize },

    #[error("singular jacobian diagonal at row {row}, dim {dim} (|d| = {value:e})")]
    Singular { row: usize, dim: usize, value: f64 },

    #[error("non-finite partial d eps[{i}] / d z[{tau}, {j}]")]
    NonFinitePartial { i: usize, j: usize, tau: usize },

    #[error("non-finite loss term {0}")]
    NonFiniteLoss(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl LstdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LstdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            LstdError::Config(_) => "config",
            LstdError::Shape(_) => "shape",
            LstdError::Generation { .. } => "generation",
            LstdError::Singular { .. } => "singular",
            LstdError::NonFinitePartial { .. } => "non_finite_partial",
            LstdError::NonFiniteLoss(_) => "non_finite_loss",
            LstdError::Io { .. } => "io",
            LstdError::Parse { .. } => "parse",
            LstdError::Checkpoint(_) => "checkpoint",
        }
    }
}

pub type Result<T, E = LstdError> = std::result::Result<T, E>;
