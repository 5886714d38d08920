use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value {value} outside the domain [0, 1]")]
    Domain { value: f64 },

    #[error("integrand is not finite at node t = {node}")]
    NonFiniteIntegrand { node: f64 },

    #[error("ODE solution diverged at grid node {node}")]
    Divergence { node: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
