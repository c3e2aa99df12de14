use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate attention: {0}")]
    DegenerateAttention(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward error: {0}")]
    Backward(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("synthetic data error: {0}")]
    Synth(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
