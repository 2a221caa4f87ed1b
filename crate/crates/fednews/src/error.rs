//! Error types shared across the crate.

use thiserror::Error;

/// Errors from model arithmetic: encoding, scoring, loss, gradients.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("token index {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("no representation available for item {0}")]
    MissingRepr(u32),
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("label index {label} out of range for {candidates} candidates")]
    BadLabel { label: usize, candidates: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Errors raised by the secure aggregation protocol.
#[derive(Debug, Error)]
pub enum SecAggError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("need at least {needed} shares, got {got}")]
    ThresholdNotMet { needed: usize, got: usize },
    #[error("signature verification failed for participant {0}")]
    BadSignature(u32),
    #[error("missing pairwise seed for live peer {0}")]
    MissingPairwiseSeed(u32),
    #[error("both share kinds requested for participant {0}")]
    ConflictingShareRequest(u32),
    #[error("value at index {index} exceeds fixed-point range (|x| < 2^{limit})")]
    QuantizeOverflow { index: usize, limit: u32 },
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("protocol state error: {0}")]
    Protocol(String),
}

/// Errors from data ingestion and synthetic generation.
#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    BadRow {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("dataset is empty after filtering")]
    Empty,
}

/// Errors from run configuration files and flags.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: missing required key `{key}`")]
    MissingKey { path: String, key: String },
    #[error("{path}: unknown key `{key}`")]
    UnknownKey { path: String, key: String },
    #[error("{path}: bad value for `{key}`: {msg}")]
    BadValue {
        path: String,
        key: String,
        msg: String,
    },
}

/// Errors from the simulated transport.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("party {0} is not registered on the bus")]
    UnknownParty(u32),
}

/// Top-level error for experiment runs.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("round {round} failed: {msg}")]
    Round { round: u64, msg: String },
}
