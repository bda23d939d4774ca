use thiserror::Error;

/// Errors raised by model construction, evaluation and fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value or parameter lies outside the domain where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An observation falls outside the support of its variable's family.
    #[error("value {value} of variable '{variable}' is out of support for the {family} family")]
    OutOfSupport {
        variable: String,
        family: &'static str,
        value: f64,
    },

    /// A computation produced a non-finite or otherwise unusable value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The model specification is inconsistent with itself or with the data.
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    /// Every optimisation attempt failed.
    #[error("estimation failed: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
