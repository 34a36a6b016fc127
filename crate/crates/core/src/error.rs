use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("evaluation failed at theta = {theta:?}: {what}")]
    EvaluationFailure { theta: Vec<f64>, what: String },

    #[error("finite-difference Hessian is asymmetric (max |H - H^T| = {asymmetry:e}); differencing too coarse")]
    AsymmetricHessian { asymmetry: f64 },

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("minimizer did not converge after {iterations} iterations (|grad| = {grad_norm:e}, best = {best:?})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Vec<f64>,
    },

    #[error("quadrature box too small: boundary/peak ratio {boundary_ratio:e}; try half-width {suggested_half_width}")]
    DomainTooSmall {
        boundary_ratio: f64,
        suggested_half_width: f64,
    },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("sampler diverged at t = {t} (h = {h}): theta = {theta:?}")]
    Divergence { t: f64, theta: Vec<f64>, h: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("kernel density vanished at replica {replica}; bandwidth {bandwidth:e} too small, use a larger rule")]
    BandwidthUnderflow { replica: usize, bandwidth: f64 },

    #[error("check `{check}` failed to run: {source}")]
    Check {
        check: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("config parse error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
