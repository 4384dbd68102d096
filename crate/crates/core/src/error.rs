use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure to obtain log-probabilities for one (context, continuation) pair.
///
/// These are per-sample: the scoring loop marks the sample unscoreable and moves on.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("continuation produced no tokens")]
    EmptyContinuation,
    #[error("context/continuation boundary at char {boundary} falls inside token [{start}, {end})")]
    Alignment { boundary: usize, start: usize, end: usize },
    #[error("log-probability {0} is not a finite value <= 0")]
    InvalidLogProb(f64),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("perplexity ratio is not a positive finite number: {0}")]
    Degenerate(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no usable records ({skipped} skipped)")]
    EmptyCorpus { path: PathBuf, skipped: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("{unscoreable} of {total} samples could not be scored; check the provider configuration")]
    TooManyUnscoreable { unscoreable: usize, total: usize },
    #[error("no aligned samples: every scored sample has s_com >= 1")]
    NoAlignedSamples,
    #[error("invalid selection request: {0}")]
    Selection(String),
    #[error("corrupt run state {path}: {reason}")]
    CorruptState { path: PathBuf, reason: String },
    #[error("provider version `{0}` is unchanged since the previous epoch; pass --force to re-score anyway")]
    UnchangedVersion(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
