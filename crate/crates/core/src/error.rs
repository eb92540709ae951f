use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} id {id} out of range (size {size})")]
    IdOutOfRange { what: &'static str, id: usize, size: usize },

    #[error("item {0} appears more than once in the ranking")]
    DuplicateItem(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance too large for exact enumeration: {count} > {limit}")]
    TooLarge { count: f64, limit: f64 },

    #[error("rating matrix is not dense: missing cell (user {user}, item {item})")]
    MissingCell { user: String, item: String },

    #[error("line {line}: duplicate cell (user {user}, item {item})")]
    DuplicateCell { line: u64, user: String, item: String },

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("gradient overflow: the step must not be applied")]
    Overflow,

    #[error("empty batch")]
    EmptyBatch,

    #[error("inconsistent ranking length: expected {expected}, found {found}")]
    InconsistentLength { expected: usize, found: usize },

    #[error("GRPO group of size {0} is too small (need at least 2)")]
    GroupTooSmall(usize),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("config: {0}")]
    ConfigConstraint(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V> = std::result::Result<V, Error>;
