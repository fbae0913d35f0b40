use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A configuration value failed validation. `key` is its dotted path.
    #[error("invalid value for `{key}`: {message}")]
    Field { key: String, message: String },

    #[error("unknown node {node} (topology has {n_nodes} nodes)")]
    UnknownNode { node: usize, n_nodes: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

/// Attributes a validation failure to a configuration key.
pub(crate) fn at_key(key: &str, err: Error) -> Error {
    let message = match err {
        Error::InvalidArgument(m) | Error::InvalidConfig(m) => m,
        Error::Field { key: inner, message } => {
            return Error::Field {
                key: format!("{key}.{inner}"),
                message,
            }
        }
        other => other.to_string(),
    };
    Error::Field {
        key: key.to_string(),
        message,
    }
}
