use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("population has {available} rows but the design needs {needed}")]
    InsufficientPopulation { needed: usize, available: usize },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("no posterior draws to summarize")]
    EmptyDraws,

    #[error("no usable input rows: {0}")]
    EmptyInput(String),

    #[error("grid cell has no successful replicates")]
    EmptyCell,

    #[error("chain failed at iteration {iteration}: {source}")]
    ChainFailure {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid cell {cell} aborted: {failed} of {total} replicates failed")]
    CellAborted {
        cell: String,
        failed: usize,
        total: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Pattern { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
