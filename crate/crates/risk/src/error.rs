use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("commune table error: {0}")]
    Communes(String),

    #[error("{0}")]
    Invalid(String),

    #[error("reference series too short: {len} years, need at least {min}")]
    ReferenceTooShort { len: usize, min: usize },

    #[error("cost model domain error: building count {0} is negative")]
    NegativeExposure(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RiskError>;
