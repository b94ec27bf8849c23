use std::path::PathBuf;

/// Errors raised by models, estimators and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("divergence at step {step}: {what}")]
    Diverged { step: u64, what: String },

    #[error("matrix block {block} is not positive definite (pivot {pivot:e})")]
    NotPositiveDefinite { block: usize, pivot: f64 },

    #[error("symbol {symbol} outside alphabet of size {size}")]
    UnknownSymbol { symbol: usize, size: usize },

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
