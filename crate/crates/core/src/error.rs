use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("parameter index theta[{index}] out of range 1..={p}")]
    ParamIndex { index: usize, p: usize },

    #[error("non-finite value in {what} at entry {entry:?} (t = {t})")]
    NonFinite {
        what: &'static str,
        entry: Vec<usize>,
        t: f64,
    },

    #[error("model `{0}` not found")]
    ModelNotFound(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("Riccati solution lost symmetry ({asymmetry:e}) at t = {t}; refine the grid")]
    GridResolution { t: f64, asymmetry: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("rank-deficient spline design: basis dimension K = {k} with n = {n} observations")]
    RankDeficient { k: usize, n: usize },

    #[error("no feasible knot candidate")]
    NoFeasibleCandidate,

    #[error("t = {t} outside [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("estimation failed: all {starts} starts failed ({reason})")]
    EstimationFailed { starts: usize, reason: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
