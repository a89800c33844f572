use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix failed a structural or physicality check.
    #[error("invalid covariance matrix: {0}")]
    InvalidMatrix(String),

    /// A transmissivity range selected no samples.
    #[error("empty selection: no samples in [{lo}, {hi}]")]
    EmptySelection { lo: f64, hi: f64 },

    /// The effective transmissivity vanished.
    #[error("degenerate channel: effective transmissivity is zero")]
    DegenerateChannel,

    /// Parameter estimation could not proceed on the supplied data.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The objective returned a non-finite value during a search.
    #[error("optimization error at V_A = {v_a}: objective returned {value}")]
    Optimization { v_a: f64, value: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
