use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative input: {what} = {value}")]
    NegativeInput { what: &'static str, value: f64 },

    #[error("state {to} is not reachable from {from} along the flow")]
    Unreachable { from: f64, to: f64 },

    #[error("query y = {y} lies outside the support [f(x), inf) with f(x) = {lower}")]
    OutOfSupport { y: f64, lower: f64 },

    #[error("sampler `{sampler}` does not apply to model `{model}`")]
    FamilyMismatch { sampler: &'static str, model: String },

    #[error("accumulated hazard {reached} did not reach {target} before the state cap {cap}")]
    CapExceeded { target: f64, reached: f64, cap: f64 },

    #[error("sampler failed at step {index}: {source}")]
    Sampler {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model dimension {dim} is outside the admissible collection (dim^2 > n = {n})")]
    ModelOutsideCollection { dim: usize, n: usize },

    #[error("sample of size {n} is too small: need at least {min}")]
    SampleTooSmall { n: usize, min: usize },

    #[error("inconsistent chain at transition {index}: f^-1(Z_k) < Z_(k-1)")]
    InconsistentChain { index: usize },

    #[error("evaluation grid is invalid: {0}")]
    Grid(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("replicate {replicate} at n = {n} failed: {source}")]
    Replicate {
        n: usize,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery (sampler caps, empty model
    /// collections, undersized samples) as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::CapExceeded { .. }
            | Error::ModelOutsideCollection { .. }
            | Error::SampleTooSmall { .. }
            | Error::InconsistentChain { .. } => true,
            Error::Sampler { source, .. } | Error::Replicate { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
