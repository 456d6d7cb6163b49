// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("missing tensor `{0}` in weights file")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, actual: Vec<usize> },

    #[error("unsupported weights file: {0}")]
    Weights(String),

    #[error("malformed tokenizer file {file}: {reason}")]
    Tokenizer { file: String, reason: String },

    #[error("model has no tokenizer attached")]
    NoTokenizer,

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds context window of {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("invalid component {0}")]
    InvalidComponent(String),

    #[error("invalid edit on {target}: {reason}")]
    InvalidEdit { target: String, reason: String },

    #[error("conflicting edits on {0}")]
    ConflictingEdits(String),

    #[error("position {position} out of range for sequence of {len} tokens")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("annotation `{0}` missing from prompt pair")]
    MissingAnnotation(String),

    #[error("`{text}` encodes to {count} tokens, expected exactly one")]
    MultiToken { text: String, count: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid patch spec: {0}")]
    PatchSpec(String),

    #[error("zero baseline logit difference")]
    ZeroBaseline,

    #[error("invalid intervention: {0}")]
    Intervention(String),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid recipe: {0}")]
    Recipe(String),

    #[error("plotting failed: {0}")]
    Plot(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
