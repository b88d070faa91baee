use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// A file did not follow its format. `location` names the record or line
    /// (1-based) when one can be identified.
    #[error("malformed input at {location}: {reason}")]
    Malformed { location: String, reason: String },

    #[error("dimension mismatch{}: expected {expected}, found {found}", ctx(.context))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("degenerate embedding: zero-norm vector")]
    DegenerateEmbedding,

    #[error("trial {index}: unknown utterance id {id:?}")]
    UnknownId { index: usize, id: String },

    #[error("both target and nontarget trials are required ({targets} targets, {nontargets} nontargets)")]
    MissingClass { targets: usize, nontargets: usize },

    #[error("{count} unlabeled trial(s) present; metrics need fully labeled trials")]
    Unlabeled { count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

fn ctx(c: &str) -> String {
    if c.is_empty() {
        String::new()
    } else {
        format!(" ({c})")
    }
}

impl Error {
    pub(crate) fn malformed(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            location: location.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the underlying filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
