use thiserror::Error;

use crate::ledger::MessageKind;

/// Errors raised by trackers, the simulator and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("item {item} outside universe 1..={universe}")]
    OutOfUniverse { item: u64, universe: u64 },

    #[error("event seq {got} is not after previous seq {previous}")]
    OutOfOrder { previous: u64, got: u64 },

    #[error("site {site} out of range for k = {k}")]
    BadSite { site: usize, k: usize },

    #[error("round snapshot {got} is not after round {previous}")]
    NonMonotoneRound { previous: u64, got: u64 },

    #[error("coordinator cannot handle message kind {0:?}")]
    UnexpectedMessage(MessageKind),

    #[error("protocol invariant broken: {0}")]
    Protocol(String),

    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },

    #[error("scaling fit: {0}")]
    Fit(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
