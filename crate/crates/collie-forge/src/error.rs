use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Validation { what: &'static str, reason: String },

    #[error("config error in {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("tester failed at evaluation {eval_index}: {reason}")]
    Tester { eval_index: u64, reason: String },

    #[error("adapter deadline of {deadline_s}s exceeded at evaluation {eval_index}")]
    AdapterTimeout { eval_index: u64, deadline_s: u64 },

    #[error("anomaly at the discovery point no longer reproduces (unstable anomaly)")]
    UnstableAnomaly,
}

impl Error {
    pub fn validation(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
