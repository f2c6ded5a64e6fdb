use std::io;

use thiserror::Error;

/// Everything that can go wrong in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed bytes or text: bad magic, truncated payload, unparseable JSON.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed input that breaks a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A `Segmenter` returned output that does not honour its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{stage} failed for frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: String,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Wraps the error with the pipeline stage and frame it came from.
    pub fn at_stage(self, stage: &'static str, frame: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            frame: frame.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage and round wrappers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Round { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}
