//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad variant/degree combination, zero resolution, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an API contract (shape mismatch, missing saved state, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad input data (NaN queries, empty meshes, malformed files, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A binary or text format failed to parse.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss; carries a diagnostic snapshot.
    #[error("numerical abort at iteration {iteration}: loss = {loss}")]
    Numeric { iteration: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
