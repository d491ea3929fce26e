use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity exceeded: {what} needs {needed}, cap is {cap}")]
    Capacity {
        what: &'static str,
        needed: u128,
        cap: u128,
    },
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("singular system at z = {re} + {im}i (pivot {pivot} in row {row})")]
    Singular {
        re: f64,
        im: f64,
        row: usize,
        pivot: f64,
    },
    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
