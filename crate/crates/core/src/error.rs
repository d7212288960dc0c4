use thiserror::Error;

/// Errors raised by the index engine, the verifier and the applications built on them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state {x} lies outside the state interval [{lower}, {upper}]")]
    Domain { x: f64, lower: f64, upper: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("memo table exceeded its cap of {cap} entries (horizon {horizon})")]
    MemoCap { cap: usize, horizon: usize },

    #[error("required horizon {required} exceeds the cap of {cap}")]
    HorizonCap { required: usize, cap: usize },

    #[error(
        "PCLI1 not certifiable at x = {x}: g_k = {g_k}, error bound = {bound} (horizon {horizon})"
    )]
    NotCertifiable {
        x: f64,
        g_k: f64,
        bound: f64,
        horizon: usize,
    },

    #[error("index table is not certified: {0}")]
    Uncertified(String),

    #[error("project {project} has no passing PCL report; refusing to use its index")]
    ProjectNotCertified { project: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("sample-path budget violated at episode {episode}, step {step}: usage {usage} > budget {budget}")]
    BudgetViolation {
        episode: u64,
        step: usize,
        usage: f64,
        budget: f64,
    },

    #[error("output failed: {message}")]
    Io {
        kind: std::io::ErrorKind,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
