use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("joint action does not match roster: {0}")]
    SchemaMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("projection did not converge within {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },
    #[error("joint action space of size {size} exceeds oracle cap {cap}")]
    OracleCapExceeded { size: u128, cap: u128 },
    #[error("no risk indicators registered for agent `{0}`")]
    MissingIndicator(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("fallback joint action is not compliant: {0}")]
    FallbackInfeasible(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
