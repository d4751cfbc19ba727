use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("state {state} is outside the state space of size {size}")]
    Domain { state: usize, size: usize },

    #[error("unsupported operation: {0}")]
    Capability(String),

    #[error("invalid configuration at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("no states with energy in [{lo}, {hi})")]
    EmptyRing { lo: f64, hi: f64 },

    #[error("proposal has zero mass at state {state} where the target is positive")]
    Support { state: usize },

    #[error("kernel is not reversible: |pi(x)K(x,y) - pi(y)K(y,x)| = {violation:e} at ({x}, {y})")]
    Reversibility { x: usize, y: usize, violation: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
