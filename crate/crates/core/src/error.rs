use std::path::PathBuf;

use thiserror::Error;

/// Where in a network a structural or numeric problem was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRef {
    Input,
    Layer(usize),
}

impl std::fmt::Display for LayerRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerRef::Input => write!(f, "input"),
            LayerRef::Layer(i) => write!(f, "layer {i}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at {at}: {message}")]
    Shape { at: LayerRef, message: String },

    #[error("non-finite values produced at {at}")]
    Numeric { at: LayerRef },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sample set: {0}")]
    EmptySamples(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("layer {0} cannot be pruned")]
    NotPrunable(usize),

    #[error("failed to read {path}: {message}")]
    Source { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn shape(at: LayerRef, message: impl Into<String>) -> Self {
        Error::Shape {
            at,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
