use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: norm {norm:e} is at or below {eps:e}")]
    DegenerateInput { norm: f64, eps: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("radial underflow: radius {radius:e} after step")]
    RadialUnderflow { radius: f64 },

    #[error("antipodal endpoints: angle {alpha} is within {eps:e} of pi")]
    AntipodalEndpoints { alpha: f64, eps: f64 },

    #[error("wrong geodesic kind: expected {expected}, got {got}")]
    WrongKind { expected: &'static str, got: String },

    #[error("shooting did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NoConvergence { iterations: usize, mismatch: f64 },

    #[error("radius {radius:e} leaves the supported domain of the {warp} warp")]
    WarpDomain { radius: f64, warp: String },

    #[error("stale forward cache: cached version {cached}, network version {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("class-mean separation failed after {attempts} attempts")]
    SeparationFailure { attempts: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
