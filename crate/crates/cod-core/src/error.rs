use thiserror::Error;

/// Errors produced by the metric, gradient, and training layers.
#[derive(Debug, Error)]
pub enum CodError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("iteration failed to converge: {0}")]
    ConvergenceFailure(String),

    #[error("degenerate singular spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("label grouping error: {0}")]
    LabelGrouping(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodError>;
