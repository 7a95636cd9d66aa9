use thiserror::Error;

/// Errors raised by the optimization lab.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside an operation's domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// A configuration cannot produce a well-defined quantity (e.g. a divergent series).
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterate became non-finite or left the divergence guard.
    #[error("iterate diverged at step {step} (norm {norm:e})")]
    Divergence { step: u64, norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(argument(format!(
            "{what}: dimension mismatch (expected {expected}, got {got})"
        )))
    }
}
