//! Error taxonomy shared across the crate.
//!
//! Config errors are caller mistakes (bad parameter files, invalid gains),
//! numeric errors are integration-time failures carrying the hybrid time at
//! which they occurred, and domain errors are contract violations on
//! individual operations.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error at (t={t}, j={j}): {what}")]
    Numeric { t: f64, j: u32, what: String },

    #[error("contract violation in {op}: {what}")]
    Domain { op: &'static str, what: String },

    #[error("equilibrium solve failed for u={u}: {what}")]
    Equilibrium { u: f64, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(op: &'static str, what: impl Into<String>) -> Self {
        Error::Domain { op, what: what.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
