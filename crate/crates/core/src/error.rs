use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the linking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid knowledge graph: {0}")]
    InvalidGraph(String),

    #[error("lexicon entry `{word}`: {reason}")]
    Lexicon { word: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at {0}")]
    NonFinite(String),

    #[error("insufficient candidates: need {needed}, only {available} available")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("metric undefined: {0}")]
    EmptyDenominator(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
