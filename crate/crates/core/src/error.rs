use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid discount vector: {0}")]
    InvalidDiscount(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite weight at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("weight matrix is {rows}x{cols}; items must be at least as many as ranks")]
    Shape { rows: usize, cols: usize },

    #[error("brute-force enumeration is limited to {cap} items, got {m1}")]
    SizeCap { m1: usize, cap: usize },

    #[error("no assignment satisfies the constraints")]
    Infeasible,

    #[error("weight matrix of {cells} cells exceeds the budget of {budget}")]
    MemoryBudget { cells: usize, budget: usize },

    #[error("instance constraints are not in canonical (>=, absolute) form")]
    NotCanonical,

    #[error("operation requires fixed-discounting (factored) weights")]
    NotFactored,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("every training instance was infeasible ({0} skipped)")]
    AllInfeasible(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the content of input data rather than by
    /// the caller's configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidDiscount(_)
                | Error::InvalidInstance(_)
                | Error::DimensionMismatch(_)
                | Error::NonFinite { .. }
                | Error::Shape { .. }
                | Error::Parse { .. }
                | Error::Version { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::EmptyTrainingSet
                | Error::NotCanonical
                | Error::NotFactored
        )
    }
}
