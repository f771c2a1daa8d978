//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid utf-8 at byte offset {offset}")]
    Decode { offset: usize },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("corpus too small: {tokens} tokens, need at least {required}")]
    CorpusTooSmall { tokens: usize, required: usize },

    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("no recorded computation for the requested backward pass: {0}")]
    NoForwardRecord(String),

    #[error("stem map file, line {line}: {reason}")]
    StemMapFile { line: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("no evaluation tokens matched the requested slice")]
    EmptySlice,

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("{} seed run(s) failed: {}", failures.len(), summarize(failures))]
    FailedSeeds { failures: Vec<(u64, String)> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad configuration or usage rather than by
    /// data or runtime failures. The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

fn summarize(failures: &[(u64, String)]) -> String {
    failures
        .iter()
        .map(|(seed, msg)| format!("seed {seed}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}
