//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or unparsable configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Rejection sampling could not satisfy the placement constraints.
    #[error("placement infeasible: gave up on {entity} after {attempts} attempts")]
    PlacementInfeasible {
        entity: &'static str,
        attempts: usize,
    },

    /// An agent emitted an action index outside 0..=N.
    #[error("invalid action {action} for agent {agent}: must be in 0..={max}")]
    InvalidAction {
        agent: usize,
        action: usize,
        max: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    /// A loss or gradient went non-finite; the offending step is reported.
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("offline training requires a non-empty dataset")]
    EmptyDataset,

    #[error("incompatible dataset configs: {0}")]
    IncompatibleConfig(String),

    #[error("mix proportions must sum to 1, got {0}")]
    ProportionSum(f64),

    #[error("requested {requested} records but the source holds {available}")]
    SizeExceedsSource {
        requested: usize,
        available: usize,
    },

    #[error("the 5-percentile needs at least {min} pooled samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed dataset, model, or manifest file.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
