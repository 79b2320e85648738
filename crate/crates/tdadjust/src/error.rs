// SPDX-License-Identifier: MIT
//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph parsing, validation, queries, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Graph file syntax error with 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Structural or role validation failure.
    #[error("graph error: {0}")]
    Graph(String),
    /// Malformed d-separation or independence query.
    #[error("query error: {0}")]
    Query(String),
    /// Malformed or ineligible adjustment set.
    #[error("adjustment error: {0}")]
    Adjustment(String),
    /// A documented size limit was exceeded.
    #[error("{what} too large: {detail}")]
    TooLarge { what: &'static str, detail: String },
    /// Numerical failure (rank deficiency, separation, non-convergence).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The randomized exact oracle disagreed with itself across draws.
    #[error("oracle indeterminate: {0}")]
    Indeterminate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
