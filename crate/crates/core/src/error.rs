use thiserror::Error;

/// Header validation failures shared by every on-disk format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("not an M3 file")]
    NotM3,
    #[error("truncated or corrupt")]
    TruncatedOrCorrupt,
    #[error("unsupported format")]
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("invalid option: {0}")]
    InvalidOption(&'static str),
    #[error("label {label} at row {row} is not below num_classes {num_classes}")]
    LabelOutOfRange { row: usize, label: u8, num_classes: usize },
    #[error("non-finite model weight at index {index}")]
    NonFiniteWeights { index: usize },
    #[error("non-finite objective value or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("search direction is not a descent direction (g'd = {slope})")]
    NotDescent { slope: f64 },
    #[error("line search failure: no step satisfied the sufficient-decrease condition")]
    LineSearchFailure,
    #[error("cannot pick {k} clusters from {rows} rows")]
    TooManyClusters { k: usize, rows: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
