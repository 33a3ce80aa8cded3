use thiserror::Error;

/// Errors raised across the sensing, inversion and learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("permittivity {epsilon} is outside the physical range")]
    EpsilonOutOfRange { epsilon: f64 },

    #[error("no wrapped-phase candidate with permittivity in [{min}, {max}]")]
    NoCandidate { min: f64, max: f64 },

    #[error("switch schedule error: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training set lacks the reference sample or one of the component groups.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
