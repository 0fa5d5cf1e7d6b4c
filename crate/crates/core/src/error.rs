use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("all classifier weight norms are zero")]
    DegenerateNorms,

    #[error("no non-empty clients available for selection")]
    NoEligibleClients,

    #[error("training diverged in round {round} on client {client}: {source}")]
    Divergence {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config field `{field}`: {constraint}")]
    Config { field: String, constraint: String },

    #[error("unknown preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse config: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("failed to serialize config: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
