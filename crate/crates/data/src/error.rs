use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("grid-stack format error: {0}")]
    Format(String),

    #[error("incomplete month {year}-{month:02}: missing days {missing:?}")]
    PartialMonth {
        year: i32,
        month: u32,
        missing: Vec<u32>,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
