use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("iterate collapsed to the zero field after {iterations} iterations")]
    Collapse { iterations: usize },

    #[error("iterate lost positivity (min {min_value:.3e}, max {max_value:.3e})")]
    LossOfPositivity { min_value: f64, max_value: f64 },

    #[error("field is not radial: shell variation {variation:.3e} at radius {radius:.3}")]
    NotRadial { radius: f64, variation: f64 },

    #[error("profile is not strictly decreasing near radius {radius:.3}")]
    NotDecreasing { radius: f64 },

    #[error("not enough samples: need more than {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("rank-deficient design matrix (smallest singular value {smallest:.3e})")]
    RankDeficient { smallest: f64 },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("decay exponent m = {m} outside ((N+2s)/(N+2s+1), N+2s) = ({lower:.4}, {upper:.4})")]
    ExponentWindow { m: f64, lower: f64, upper: f64 },

    #[error("window offset alpha = {alpha} leaves a non-positive lower radius base")]
    AlphaTooLarge { alpha: f64 },

    #[error("fixed-point contraction failed; correction norms {history:?}")]
    ContractionFailure { history: Vec<f64> },

    #[error("inner linear solve stagnated at relative residual {residual:.3e} after {iterations} iterations")]
    InnerStagnation { iterations: usize, residual: f64 },

    #[error("eigen-iteration did not converge: {0}")]
    EigenFailure(String),

    #[error("Newton iteration diverged (residual {residual:.3e})")]
    Divergence { residual: f64 },

    #[error("Newton iteration converged to the zero field")]
    ConvergedToZero,

    #[error("Newton iteration converged to a sign-changing field (min {min_value:.3e}, max {max_value:.3e})")]
    SignChanging { min_value: f64, max_value: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{path} was produced under config hash {found}, current config hash is {expected}")]
    HashMismatch { path: String, found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
