use thiserror::Error;

/// Errors raised by model construction, sampling and the combinatorial engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("adjacency matrix is not regular: {0}")]
    NotRegular(String),

    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("the outlier fluctuation law needs a > 1, got a = {0}")]
    Subcritical(f64),

    #[error("negative variance tau - chi = {value:e} for deformation index {index}")]
    NegativeVariance { index: usize, value: f64 },

    #[error("invalid limit-law parameters: {0}")]
    InvalidParams(String),

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("symmetry class mismatch: {0}")]
    BetaMismatch(String),

    #[error("numeric failure (seed {seed}): {msg}")]
    Numeric { seed: u64, msg: String },

    #[error("vector is not a unit vector (norm {0})")]
    NotUnit(f64),

    #[error("deformation eigenvalue a = 0 has no outlier prediction")]
    ZeroDeformation,

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("invalid gluing: {0}")]
    Gluing(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("parity violation: k = {k}, n = {n}")]
    Parity { k: usize, n: usize },

    #[error("moment table is missing the sub-tuple {0:?}")]
    MissingSubtuple(Vec<usize>),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
