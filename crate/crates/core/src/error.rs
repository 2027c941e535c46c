use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid increment law: {0}")]
    InvalidLaw(String),

    /// The variational constants degenerate once `d >= alpha * q`.
    #[error("not subcritical: d = {dim} >= alpha*q = {alpha_q}")]
    NotSubcritical { dim: usize, alpha_q: f64 },

    #[error("torus with {sites} sites exceeds the memory cap of {cap} sites")]
    MemoryCap { sites: u128, cap: u64 },

    #[error("unbounded functional `{0}` rejected")]
    UnboundedFunctional(String),

    #[error("power iteration stagnated after {iterations} iterations (residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
