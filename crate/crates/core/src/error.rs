use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, missing data).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced non-finite values or a factorization broke down.
    #[error("numerical failure{}: {message}", location(*.batch, *.layer))]
    Numerical {
        message: String,
        batch: Option<usize>,
        layer: Option<usize>,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(batch: Option<usize>, layer: Option<usize>) -> String {
    match (batch, layer) {
        (Some(t), Some(l)) => format!(" at batch {t}, layer {l}"),
        (Some(t), None) => format!(" at batch {t}"),
        (None, Some(l)) => format!(" at layer {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical {
            message: msg.into(),
            batch: None,
            layer: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a batch index to a numerical failure. Other variants pass through.
    pub fn at_batch(self, t: usize) -> Self {
        match self {
            Error::Numerical {
                message, layer, ..
            } => Error::Numerical {
                message,
                batch: Some(t),
                layer,
            },
            other => other,
        }
    }

    pub fn at_layer(self, l: usize) -> Self {
        match self {
            Error::Numerical {
                message, batch, ..
            } => Error::Numerical {
                message,
                batch,
                layer: Some(l),
            },
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}
