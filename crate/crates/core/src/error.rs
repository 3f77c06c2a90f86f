use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shapes are not composable: {0}")]
    NonComposable(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("enumeration cap exceeded: {0}")]
    CapExceeded(String),
    #[error("universe too small: {0}")]
    UniverseTooSmall(String),
    #[error("brute-force cap exceeded: {0}")]
    BruteForceCap(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("role mismatch: {0}")]
    RoleMismatch(String),
    #[error("memory budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
