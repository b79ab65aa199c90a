use std::path::PathBuf;

/// Errors produced by the multiplication grid, the learned rule and the
/// surrounding training and evaluation machinery.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bit width must be at least 1")]
    ZeroWidth,

    #[error("operand has {len} bits but the grid width is {n}")]
    OperandTooWide { len: usize, n: usize },

    #[error("invalid decimal integer literal {0:?}")]
    InvalidDecimal(String),

    #[error("grid is not a fixed point; decoding now would read a partial product")]
    NotFixedPoint,

    #[error("rule violation: {0}")]
    RuleViolation(String),

    #[error("no fixed point reached within {max_steps} steps")]
    Divergence { max_steps: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite gradient for parameter {index} at step {step}")]
    NonFiniteGradient { step: usize, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
