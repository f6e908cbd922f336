use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("class {class} ({name}) has {available} eligible pixels, {needed} requested")]
    Shortfall {
        class: u8,
        name: String,
        needed: usize,
        available: usize,
    },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
