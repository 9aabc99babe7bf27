use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyperparameters, dimensions or config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A client could not train (e.g. empty shard).
    #[error("client {client}: {reason}")]
    Client { client: usize, reason: String },

    /// Parameters became non-finite during training.
    #[error("numerical error in round {round}{}: {reason}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    Numerical {
        round: usize,
        /// `None` when the failure is in the global model.
        client: Option<usize>,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps an error from one cell of a sweep.
    #[error("sweep cell alpha={alpha} strategy={strategy} seed={seed}: {source}")]
    SweepCell {
        alpha: f64,
        strategy: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, looking through sweep-cell wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::SweepCell { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
