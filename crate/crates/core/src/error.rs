use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-binary input at element {index}: {value}")]
    NonBinaryInput { index: usize, value: f64 },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cross-attention memory holds no previous time step")]
    EmptyMemory,
    #[error("weights do not match attention variant: {0}")]
    VariantWeightMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("autodiff graph error: {0}")]
    Graph(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
