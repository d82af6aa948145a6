use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("refinement level {0} exceeds the supported maximum {max}", max = crate::grid::MAX_LEVEL)]
    LevelTooLarge(u32),

    #[error("coordinate ({x}, {y}) is outside the {kind} array at level {level}")]
    OutOfTriangle {
        kind: &'static str,
        x: i64,
        y: i64,
        level: u32,
    },

    #[error("field length {actual} does not match the {expected} entries of a level {level} array")]
    FieldLength {
        level: u32,
        expected: u64,
        actual: u64,
    },

    #[error("fields live on different levels: {0} vs {1}")]
    LevelMismatch(u32, u32),

    #[error("weight slice has {actual} entries, kernel needs {expected}")]
    WeightCount { expected: usize, actual: usize },

    #[error("vector length {actual} does not match matrix dimension {expected}")]
    DimensionMismatch { expected: u64, actual: u64 },

    #[error("{nnz} nonzeros overflow a signed {bits}-bit index")]
    IndexOverflow { nnz: u64, bits: u32 },

    #[error("duplicate matrix entry at ({row}, {col})")]
    DuplicateEntry { row: u64, col: u64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("malformed field dump: {0}")]
    BadDump(String),

    #[error("unknown kernel name {0:?}")]
    UnknownKernel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
