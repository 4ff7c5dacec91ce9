use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid pattern entry {0}: must be -1 or +1")]
    InvalidState(i64),

    #[error("invalid interaction weight {0}: must be -1, 0 or +1")]
    InvalidWeight(i64),

    #[error("unsupported gene count {0}: must be between 1 and {max}", max = crate::grn::MAX_GENES)]
    UnsupportedSize(usize),

    #[error("{what} {value} out of range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("modularity undefined for a network without edges")]
    NoEdges,

    #[error("degenerate Q normalization for {edges} edges: q_max = q_ran = {q}")]
    DegenerateNormalization { edges: usize, q: f64 },

    #[error("no Q normalization entry for {0} edges")]
    MissingNormalization(usize),

    #[error("cannot parse pattern token {0:?}")]
    PatternToken(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
