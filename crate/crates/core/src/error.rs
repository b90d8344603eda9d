use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rate table needs at least 2 rates, got {0}")]
    TooFewRates(usize),
    #[error("rates must be positive and strictly increasing (violated at index {index})")]
    NonMonotoneRates { index: usize },
    #[error("theta row {row} must be strictly decreasing with entries in (0,1) (violated at column {column})")]
    NonMonotoneThetaRow { row: usize, column: usize },
    #[error("theta row {row} has {got} entries, expected {expected}")]
    ThetaShape { row: usize, got: usize, expected: usize },
    #[error("change points {prev} and {next} are closer than the coherence time {coherence}")]
    CoherenceViolation { prev: usize, next: usize, coherence: usize },
    #[error("change points must be strictly increasing and lie in [1, {horizon}]: {detail}")]
    BadChangePoints { horizon: usize, detail: String },
    #[error("state index {0} is out of range")]
    StateIndexOutOfRange(usize),
    #[error("adjacent segments {0} and {1} share the same state")]
    RepeatedState(usize, usize),
    #[error("expected {expected} states for {changes} change points, got {got}")]
    StateCount { expected: usize, changes: usize, got: usize },
    #[error("slot {t} is outside 1..={horizon}")]
    SlotOutOfRange { t: usize, horizon: usize },
    #[error("rate index {0} is out of range")]
    RateIndexOutOfRange(usize),
    #[error("delta_min needs at least two channel states")]
    SingleStateMatrix,
    #[error("window holds {have} outcomes, need {need}")]
    InsufficientSamples { have: u64, need: u64 },
    #[error("no arm has been sampled since the last reset")]
    AllArmsUnsampled,
    #[error("controller already ran past the horizon ({horizon} slots)")]
    HorizonExceeded { horizon: usize },
    #[error("invalid detector configuration: {0}")]
    InvalidDetector(String),
    #[error("invalid policy configuration: {0}")]
    InvalidPolicy(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("KL divergence term for rate index {0} is zero")]
    DegenerateKl(usize),
    #[error("traces do not match: {0}")]
    MismatchedTraces(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
