use std::path::PathBuf;

use thiserror::Error;

use crate::patchgrid::Origin;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of a color or probability function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke an operation's precondition (shapes, bounds, lattice membership).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid grid, backend or job configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("backend failed on patch at {origin}: {message}")]
    Backend { origin: Origin, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Wraps an error with the name of the pipeline stage that raised it.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// True for errors caused by bad user input rather than a failing stage.
    /// The CLI maps these to exit code 1 and everything else to 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Domain(_) | Error::Contract(_) | Error::Config(_) | Error::Degenerate(_) => true,
            Error::Json { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// Patch origin the error is attributed to, if any.
    pub fn origin(&self) -> Option<Origin> {
        match self {
            Error::Backend { origin, .. } => Some(*origin),
            Error::Stage { source, .. } => source.origin(),
            _ => None,
        }
    }
}
