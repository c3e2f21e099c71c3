use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single input row that could not be turned into a record.
///
/// `row` is the 1-based data row index (the header is not counted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRejection {
    pub row: usize,
    pub field: Option<String>,
    pub reason: String,
}

impl fmt::Display for RowRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, row {}", self.reason, self.row)
    }
}

/// Outcome of one failed optimizer start, carried by [`Error::Fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostic {
    pub start: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("validation failed: {}", join_rejections(.0))]
    Validation(Vec<RowRejection>),

    #[error("fit failed: {message} ({} start(s) diagnosed)", .diagnostics.len())]
    Fit {
        message: String,
        diagnostics: Vec<StartDiagnostic>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

fn join_rejections(rows: &[RowRejection]) -> String {
    rows.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
