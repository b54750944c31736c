//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending key.
    #[error("config error: {0}")]
    Config(String),

    /// A split request cannot be satisfied by the available data.
    #[error("split error: {0}")]
    Split(String),

    /// A batch plan cannot be constructed (e.g. more mini-batch parts than batch slots).
    #[error("infeasible sampling plan: {0}")]
    Infeasible(String),

    /// Non-finite loss or gradient; training aborts rather than masking it.
    #[error("divergence at step {step}: {msg}")]
    Divergence { step: u64, msg: String },

    /// Malformed on-disk artifact (checkpoint, dataset cache, metrics file).
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
