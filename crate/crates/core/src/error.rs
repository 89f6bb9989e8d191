use thiserror::Error;

use crate::matcore::Precision;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A QR factor had a (near-)zero diagonal entry, so the input is singular.
    #[error("singular matrix: |R[{index},{index}]| = {value:e} is at or below the singularity threshold")]
    Singular { index: usize, value: f64 },

    #[error("decomposition failed for factor {factor} on pass {pass}: {source}")]
    Decomposition {
        factor: usize,
        pass: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration did not converge: {0}")]
    Convergence(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("precision mismatch: checkpoint holds {found} data but the run is configured for {expected}")]
    PrecisionMismatch { expected: Precision, found: Precision },

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}
