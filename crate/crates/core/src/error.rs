use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("coarse_n {coarse_n} does not divide fine grid of {fine_count} cells")]
    NotDivisible { coarse_n: usize, fine_count: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite {what} at fine index {index}")]
    NonFinite { what: String, index: usize },

    #[error("driver {label} fails integrability gate: {detail}")]
    Integrability { label: String, detail: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("model `{0}` is not an Ito (a, b) problem")]
    NotItoModel(String),

    #[error("not enough samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("rate fit needs at least 3 grid sizes spanning 8x, got {0:?}")]
    TooFewLevels(Vec<usize>),

    #[error("all {0} paths diverged")]
    AllDiverged(usize),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
