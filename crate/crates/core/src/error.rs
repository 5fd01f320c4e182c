//! Crate-wide error type. Anything that can fail at a module boundary —
//! config validation, file formats, numeric blow-ups mid-training — surfaces
//! as an [`Error`] so the CLI can report it and exit nonzero.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition (bad dimensions, empty
    /// batch, probe shorter than the context size, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite number showed up where the contract requires finite
    /// values. The string names the offending term or input.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A checkpoint / store / config file failed structural validation.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// The Jacobi eigensolver did not converge.
    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}

/// Checks that every component of `xs` is finite; `what` names the value in
/// the error message.
pub fn ensure_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Scalar variant of [`ensure_finite`].
pub fn ensure_finite_scalar(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
