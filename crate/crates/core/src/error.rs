use thiserror::Error;

use crate::kraus::{ControlInput, Outcome};

#[derive(Debug, Error)]
pub enum Error {
    #[error("state has no population above the zero tolerance {tolerance}")]
    AllZero { tolerance: f64 },

    #[error("outcome {y} cannot occur under control {u} (probability {probability:e})")]
    ImpossibleOutcome {
        u: ControlInput,
        y: Outcome,
        probability: f64,
    },

    #[error("state buffer would grow to {requested} slots, capacity is {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },

    #[error("no admissible window found above {lower} (scanned up to {limit})")]
    NotFound { lower: usize, limit: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("realization {index} at epsilon {epsilon}: {source}")]
    Realization {
        epsilon: f64,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
