//! Fix-quality matrix computation and greedy selection of golden pairs.

mod matrix;
mod select;

pub use matrix::{compute_fix_quality_matrix, FixQualityMatrix, MatrixOptions, MATRIX_TAG};
pub use select::{
    extract_aupairs, extract_aupairs_with, random_pair_baseline, AuPairEntry, AuPairList,
    DEFAULT_TOLERANCE,
};

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("matrix entry ({row}, {col}) = {value} is outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("malformed matrix file: {0}")]
    Format(String),
    #[error("requested {requested} pairs but only {available} are available")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
