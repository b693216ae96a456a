use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("row {row}: cannot parse timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },

    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("user {user} has {len} interactions, need more than {n_holdout} for the holdout")]
    HoldoutTooLong { user: String, len: usize, n_holdout: usize },

    #[error("item id {item} is outside the catalog of {catalog} items")]
    OutOfCatalog { item: u32, catalog: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("batch contains no target positions")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("no unmasked items left to choose from")]
    AllMasked,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("bundle: {0}")]
    Bundle(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// Short machine-parsable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingColumn(_)
            | Error::BadTimestamp { .. }
            | Error::BadRow { .. }
            | Error::Csv(_) => "input",
            Error::EmptyDataset | Error::HoldoutTooLong { .. } | Error::Bundle(_) => "data",
            Error::OutOfCatalog { .. }
            | Error::EmptyBatch
            | Error::Diverged { .. }
            | Error::Checkpoint(_) => "model",
            Error::InvalidParameter(_) | Error::AllMasked | Error::Contract(_) => "decode",
            Error::Config { .. } | Error::Json(_) => "config",
        }
    }
}
