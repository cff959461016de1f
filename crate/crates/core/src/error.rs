use std::fmt;

/// Errors shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The embedding is not compact (σ = 0), so the requested rate does not exist.
    #[error("non-compact embedding: {0}")]
    NonCompact(String),

    /// The weight has unbounded oscillation over the requested region.
    #[error("unbounded weight oscillation: {0}")]
    UnboundedOscillation(String),

    /// An iterative or adaptive computation did not reach its tolerance.
    /// `partial` holds whatever was computed, for persistence.
    #[error("numerical failure: {message} (achieved {achieved:e})")]
    Numerical { message: String, achieved: f64, partial: Option<Box<serde_json::Value>> },

    /// A documented precondition of a derived bound failed.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A sample set too small or too narrow for a fit.
    #[error("range error: {0}")]
    Range(String),

    /// Invalid configuration; carries one diagnostic per offending field.
    #[error("configuration error: {}", FieldList(.0))]
    Config(Vec<FieldError>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One offending configuration field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError { field: field.into(), message: message.into() }
    }
}

struct FieldList<'a>(&'a [FieldError]);

impl fmt::Display for FieldList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", e.field, e.message)?;
        }
        Ok(())
    }
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(vec![FieldError::new(field, message)])
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::NonCompact(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
