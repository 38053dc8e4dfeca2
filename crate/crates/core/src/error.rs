use thiserror::Error;

/// Errors raised by the query-release toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("distribution is degenerate: every log-weight is -inf or NaN")]
    DegenerateDistribution,

    #[error("distribution is not normalized: weights sum to {sum}")]
    Unnormalized { sum: f64 },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("query set is empty")]
    EmptyQuerySet,

    #[error("cannot draw {requested} workloads: only {available} attribute subsets of size {k}")]
    TooManyWorkloads { requested: u64, available: u64, k: usize },

    #[error("no candidates to select from")]
    NoCandidates,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("privacy budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("full domain has {size} points, above the cap of {cap}; use public-data reweighting instead")]
    DomainTooLarge { size: String, cap: u64 },

    #[error("missing column {column:?} in CSV header")]
    MissingColumn { column: String },

    #[error("row {row}, column {column:?}: unknown category {value:?}")]
    UnknownCategory { row: usize, column: String, value: String },

    #[error("row {row}, column {column:?}: value {value:?} falls outside every bin")]
    OutsideBins { row: usize, column: String, value: String },

    #[error("row {row}, column {column:?}: {message}")]
    BadValue { row: usize, column: String, message: String },

    #[error("empty stratum: {0}")]
    EmptyStratum(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
