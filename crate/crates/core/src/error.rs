use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance is singular (det = {det:e})")]
    SingularCovariance { det: f64 },

    #[error("scale target must be positive, got ({w}, {h})")]
    InvalidTarget { w: f64, h: f64 },

    #[error("voronoi tessellation needs at least one point")]
    NoPoints,

    #[error("watershed needs at least one foreground marker")]
    NoMarkers,

    #[error("basin {0} contains no cells")]
    EmptyBasin(u32),

    #[error("scores are degenerate: {0}")]
    DegenerateScores(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("scene spec is infeasible: {0}")]
    SpecInfeasible(String),

    #[error("annotation file is empty")]
    EmptyFile,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
