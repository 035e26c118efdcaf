use thiserror::Error;

/// Error type shared by all analysis modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("irregular sampling: expected {expected}-day interval, found {found} days before sample {index}")]
    IrregularSampling {
        expected: i64,
        found: i64,
        index: usize,
    },

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("input too short: need at least {needed} samples, have {have}")]
    TooShort { needed: usize, have: usize },

    #[error("lag {lag} out of range for series of length {len}")]
    LagOutOfRange { lag: i64, len: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("window index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("window spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("k={k} too large for {items} items")]
    KTooLarge { k: usize, items: usize },

    #[error("no candidate window reaches inter-cluster fraction {threshold} for any k in range")]
    NoCandidateQualifies { threshold: f64 },

    #[error("no windows after baseline window {baseline} (total {count})")]
    NoPostBaselineWindows { baseline: usize, count: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("instance too large for exhaustive search: {items} items, k={k}")]
    TooLarge { items: usize, k: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
