use thiserror::Error;

/// Errors produced by the numerical library and the experiment tooling.
#[derive(Debug, Error)]
pub enum DpmmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate modality {modality}: within-modality weight mass is zero")]
    DegenerateModality { modality: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("bootstrap interval failed: {0}")]
    CiFailure(String),

    #[error("training diverged: non-finite {component} loss at epoch {epoch}, step {step}")]
    Divergence {
        component: String,
        epoch: usize,
        step: usize,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DpmmError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DpmmError {
    DpmmError::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DpmmError::DimensionMismatch { expected, got })
    }
}
