use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0}; only 1, 2 and 3 are handled")]
    UnsupportedDimension(usize),

    #[error("atom {index}: mass must be positive and finite, got {mass}")]
    InvalidMass { index: usize, mass: f64 },

    #[error("atom {index}: coordinates must be finite")]
    NonFiniteAtom { index: usize },

    #[error("coordinates must be finite")]
    NonFinite,

    #[error("quasicubes are images under different maps")]
    MapMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cube carries no mass")]
    ZeroMass,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
