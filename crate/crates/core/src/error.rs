use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("no {domain} embedding for ids {ids:?}")]
    MissingIds { domain: &'static str, ids: Vec<usize> },

    #[error("unknown {domain} id {id}")]
    UnknownId { domain: &'static str, id: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("config hash mismatch for {artifact}: artifact has {found}, config has {expected}")]
    ConfigHashMismatch { artifact: String, found: String, expected: String },

    #[error("missing {kind}: {}", path.display())]
    MissingArtifact { kind: &'static str, path: PathBuf },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-parsable tag used by the command-line driver.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::InvalidSpec { .. } => "invalid-spec",
            Error::Parse { .. } => "parse-error",
            Error::UnknownField(_) => "unknown-field",
            Error::MissingIds { .. } => "missing-ids",
            Error::UnknownId { .. } => "unknown-id",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::Diverged { .. } => "diverged",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Empty(_) => "empty-input",
            Error::CorruptCheckpoint(_) => "corrupt-checkpoint",
            Error::CheckpointVersion { .. } => "checkpoint-version",
            Error::ConfigHashMismatch { .. } => "config-hash-mismatch",
            Error::MissingArtifact { kind, .. } => match *kind {
                "checkpoint" => "missing-checkpoint",
                "dataset" => "missing-dataset",
                "embeddings" => "missing-embeddings",
                "generated corpus" => "missing-generated",
                _ => "missing-artifact",
            },
            Error::Config { .. } => "config-error",
            Error::Io { .. } => "io-error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
