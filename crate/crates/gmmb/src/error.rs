use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} outside the open support of variable {column}")]
    OutsideSupport { column: usize, value: f64 },

    #[error("validation failed: {n_violations} observation(s) on or outside their declared bounds (first at row {first_row}, column {first_col})")]
    ValidationFailed {
        n_violations: usize,
        first_row: usize,
        first_col: usize,
    },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("covariance of component {component} is numerically singular")]
    SingularCovariance { component: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty cluster produced by every k-means start")]
    EmptyClusterInit,

    #[error("all fits in the sweep failed")]
    AllFitsFailed,
}
