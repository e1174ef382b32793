use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the enhancement front-end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("position {position:?} lies outside the room {dimensions:?}")]
    OutsideRoom { position: [f64; 3], dimensions: [f64; 3] },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("wav {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("tensor file: {0}")]
    TensorFormat(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Attaches the name of the pipeline stage that produced the error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The pipeline stage this error was raised in, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by bad user configuration or inputs
    /// (as opposed to numerical breakdown or I/O).
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::Shape(_) | Error::Empty(_) | Error::OutsideRoom { .. } | Error::Toml(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::Numerical(_) | Error::NonFinite(_))
    }
}
