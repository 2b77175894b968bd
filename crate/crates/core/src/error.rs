use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("interaction ({user}, {item}) out of range for {num_users} users x {num_items} items")]
    OutOfBounds {
        user: u32,
        item: u32,
        num_users: usize,
        num_items: usize,
    },
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: &'static str },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("configuration error: {0}")]
    Config(&'static str),
    #[error("popular item mean IIW must be strictly below the niche item mean IIW")]
    ReductionPrecondition,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: &'static str) -> Self {
        Error::Parameter { name, reason }
    }
}
