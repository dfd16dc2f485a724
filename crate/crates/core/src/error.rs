use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pattern-mining pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot estimate delta: {0}")]
    Estimation(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("build error: {0}")]
    Build(String),

    #[error("combine error: {0}")]
    Combine(String),

    #[error("query bounds [{le}, {ri}) invalid for length {len}")]
    OutOfRange { le: usize, ri: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("instance too large for exhaustive search: n = {n}, limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
