use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("symbol `{symbol}` is not in the {dimension} alphabet")]
    UnknownSymbol { dimension: &'static str, symbol: String },

    #[error("duplicate {what} `{id}`")]
    Duplicate { what: &'static str, id: String },

    #[error("rating vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("action set is empty")]
    EmptyActionSet,

    #[error("requested {requested} recommendations but only {available} actions exist")]
    TooManyRecommendations { requested: usize, available: usize },

    #[error("trial index {index} out of range (scenario has {trials} trials)")]
    TrialOutOfRange { index: usize, trials: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("{0}: no input")]
    EmptyInput(&'static str),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed record on line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid { what, reason: reason.into() }
    }
}
