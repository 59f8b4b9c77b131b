use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("weight aligning requires at least one old class")]
    NoOldClasses,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error at step {step}: {message}")]
    Protocol { step: usize, message: String },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact: expected `{}`", .0.display())]
    MissingArtifact(PathBuf),

    #[error("run directory `{}` is locked by another writer", .0.display())]
    Locked(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image output: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Wraps an error with the (1-based) step index it occurred in.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ (Error::Step { .. } | Error::Protocol { .. }) => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Step { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
