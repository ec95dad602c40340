use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid {element}: {reason}")]
    Validation { element: String, reason: String },
    #[error("phase enumeration supports at most 32 movements, got {0}")]
    TooManyMovements(usize),
}

impl NetworkError {
    pub fn validation(element: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Validation {
            element: element.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown intersection {0}")]
    UnknownIntersection(u32),
    #[error("phase index {phase} outside [1, {max}] at intersection {intersection}")]
    PhaseOutOfRange {
        intersection: u32,
        phase: usize,
        max: usize,
    },
    #[error("duration {duration}s below d_min {d_min}s at intersection {intersection}")]
    BelowMinimum {
        intersection: u32,
        duration: f64,
        d_min: f64,
    },
    #[error("duration {duration}s above d_max {d_max}s at intersection {intersection}")]
    AboveMaximum {
        intersection: u32,
        duration: f64,
        d_max: f64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeliberationError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("defense unavailable for candidate {candidate} after {attempts} attempts: {last}")]
    DefenseUnavailable {
        candidate: String,
        attempts: u32,
        last: String,
    },
    #[error("consensus unavailable after {attempts} attempts: {last}")]
    ConsensusUnavailable { attempts: u32, last: String },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("all D+ weights are zero ({0} records)")]
    DegenerateWeights(usize),
    #[error("{what}: expected {expected} values, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no consensus score for candidate {0}")]
    MissingScore(String),
    #[error("dataset line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Errors surfaced by the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Deliberation(#[from] DeliberationError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error("invalid run specification: {0}")]
    Spec(String),
}

impl Error {
    /// Whether the failure happened before any simulation work (bad input).
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Network(_) | Error::Spec(_))
    }
}
