use thiserror::Error;

/// Errors raised by grid construction, field validation, norm evaluation,
/// inequality suites and the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("field not in space at this resolution: {0}")]
    NotInSpace(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("non-finite integrand at node {node}, sample {sample}: {what}")]
    NonFinite {
        node: usize,
        sample: usize,
        what: String,
    },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("solver did not converge for sample {sample} after {iterations} outer iterations (last update {last_update:.3e}, residual {last_residual:.3e})")]
    NonConvergence {
        sample: usize,
        iterations: usize,
        last_update: f64,
        last_residual: f64,
    },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
