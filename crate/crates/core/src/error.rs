// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the engine.

use thiserror::Error;

/// Errors produced by the slider engine.
#[derive(Debug, Error)]
pub enum FslError {
    #[error("non-finite scale value {0}")]
    NonFiniteScale(f64),

    #[error("empty scale list")]
    EmptyGrid,

    #[error("invalid concept triplet: {0}")]
    InvalidTriplet(String),

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite sampler state at step {step}")]
    NonFiniteState { step: usize },

    #[error("unknown condition `{0}`")]
    UnknownCondition(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("denoiser failed at scale {scale} step {step}: {source}")]
    AtStep {
        scale: f64,
        step: usize,
        #[source]
        source: Box<FslError>,
    },

    #[error("scoring failed at scale {scale}: {source}")]
    AtScale {
        scale: f64,
        #[source]
        source: Box<FslError>,
    },

    #[error("{direction} direction: {source}")]
    InDirection {
        direction: &'static str,
        #[source]
        source: Box<FslError>,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote failure: {0}")]
    RemoteFailure(String),

    #[error("timed out after {0:.1} s")]
    Timeout(f64),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("empty group `{0}`")]
    EmptyGroup(String),

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("alignment curve is constant; nothing to invert")]
    DegenerateAlignment,

    #[error("curve is not invertible: {0}")]
    NotInvertible(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("entry {index} is missing field `{field}`")]
    MissingField { index: usize, field: &'static str },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl FslError {
    /// Whether this error comes from the configuration rather than from running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            FslError::NonFiniteScale(_)
                | FslError::EmptyGrid
                | FslError::InvalidTriplet(_)
                | FslError::BadConfig(_)
                | FslError::Parse { .. }
                | FslError::MissingField { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, FslError>;
