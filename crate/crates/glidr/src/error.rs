use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected head<TAB>relation<TAB>tail, found {found} field(s)")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("entity index {index} out of range (|E| = {bound})")]
    EntityOutOfRange { index: usize, bound: usize },

    #[error("relation index {index} out of range ({bound} predicates)")]
    RelationOutOfRange { index: usize, bound: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("relation {0} has no train-split positives")]
    NoTrainPositives(String),

    #[error("non-finite gradient at step {step} (parameter {param})")]
    NonFiniteGradient { step: u64, param: usize },

    #[error("round cap {cap} exhausted without fixed point or wipeout")]
    RoundCapExhausted { cap: usize },

    #[error("instance too large for exhaustive grounding: {assignments:.3e} assignments")]
    InstanceTooLarge { assignments: f64 },

    #[error("cannot parse rule: {0}")]
    RuleParse(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bad checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
