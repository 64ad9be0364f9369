use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate (zero-norm) vector")]
    DegenerateVector,
    #[error("loss function is not deterministic: {0}")]
    Determinism(String),
    #[error("embedding `{0}` not found in bank")]
    MissingEmbedding(String),
    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },
    #[error("generation error: {0}")]
    Generation(String),
    #[error("model parameters changed during a frozen-model run")]
    FrozenModelViolation,
    #[error("frozen bank entry `{0}` was modified")]
    FrozenTokenViolation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("catalog error: {0}")]
    Catalog(String),
    #[error("model fingerprint mismatch: {0}")]
    FingerprintMismatch(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
