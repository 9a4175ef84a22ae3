use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("size {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    /// Smallest singular value fell below the relative rank threshold.
    #[error("matrix is singular at the rank threshold")]
    Singular,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("column {0} of the channel matrix is zero")]
    ZeroColumn(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("source point coincides with array element {0}")]
    CoincidentSource(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
