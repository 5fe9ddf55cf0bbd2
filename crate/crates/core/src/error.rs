//! Error type shared by every module of the core crate.

use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A function was evaluated outside the set where it is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A vehicle or cell index does not exist.
    #[error("index {index} out of range for {len} entries")]
    Index { index: usize, len: usize },
    /// Parameters violate a structural requirement.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// The time step exceeds the stability bound of an explicit scheme.
    #[error("time step {dt} exceeds the stability bound {bound}")]
    Cfl { dt: f64, bound: f64 },
    /// A macroscopic state left its admissible range.
    #[error("cell {cell}: {what}")]
    Constraint { cell: usize, what: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
