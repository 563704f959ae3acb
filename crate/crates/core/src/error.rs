//! Crate-wide error type.
//!
//! Errors split into two families that map onto the CLI exit codes: data
//! errors (malformed inputs, contract violations — exit 1) and backend
//! errors (model endpoint failures — exit 2).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate table id {0:?}")]
    DuplicateTableId(String),

    #[error("row {row} has {got} cells, expected {expected}")]
    RowArity {
        row: usize,
        got: usize,
        expected: usize,
    },

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("no instruction reserve configured for task {0}")]
    MissingReserve(String),

    #[error("invalid budget plan: {0}")]
    InvalidPlan(String),

    #[error("table {table_id}: row {row} does not fit the allowed subtable length ({cost} tokens with headers, allowed {allowed})")]
    UnsegmentableRow {
        table_id: String,
        row: usize,
        cost: usize,
        allowed: usize,
    },

    #[error("task {task} requires a non-empty candidate subset")]
    MissingCandidates { task: String },

    #[error("template for {task} left placeholder {placeholder} unfilled")]
    UnfilledPlaceholder { task: String, placeholder: String },

    #[error("no template registered for task {0:?}")]
    MissingTemplate(String),

    #[error("table {0:?} has no rows to sample an entity from")]
    NoRowsToSample(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("duplicate candidate {0:?}")]
    DuplicateCandidate(String),

    #[error("no relevance score for item {0:?}")]
    MissingScore(String),

    #[error("oracle returned a non-permutation for {node}: {detail}")]
    NonPermutation { node: String, detail: String },

    #[error("prediction/gold length mismatch: {predictions} vs {golds}")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error("relevant set is empty")]
    EmptyRelevant,

    #[error("relevant item {0:?} is not in the ranking")]
    RelevantNotRanked(String),

    #[error("instance {instance}: {message}")]
    InvalidInstance { instance: String, message: String },

    #[error("backend error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend {
        message: String,
        status: Option<u16>,
    },

    #[error(
        "backend failed on subset {failed} ({completed} of {total} subsets completed): {message}"
    )]
    SubsetFailed {
        failed: usize,
        completed: usize,
        total: usize,
        message: String,
    },

    #[error("{count} instances failed:\n{details}")]
    Batch {
        count: usize,
        details: String,
        backend: bool,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the model backend rather than the input data.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend { .. }
                | Error::SubsetFailed { .. }
                | Error::NonPermutation { .. }
                | Error::Batch { backend: true, .. }
        )
    }
}
