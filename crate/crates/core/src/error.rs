use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed brackets at char {position}: {reason}")]
    MalformedBrackets { position: usize, reason: &'static str },

    #[error("LLM service unavailable after {attempts} attempt(s): {reason}")]
    LlmUnavailable { attempts: u32, reason: String },

    #[error("no list literal found in LLM output: {snippet:?}")]
    UnparsableOutput { snippet: String },

    #[error("replay mode has no cached response for request {key}")]
    CacheMissInReplay { key: String },

    #[error("empty denominator computing {metric}")]
    EmptyDenominator { metric: &'static str },

    #[error("visibility oracle has no verdict for {object:?} in image {image_id:?}")]
    OracleMiss { image_id: String, object: String },

    #[error("caption already contains bracket markup")]
    AlreadyAnnotated,

    #[error("generated caption mentions omitted object {object:?}")]
    LeakedObject { object: String },

    #[error("control corpus needs both epsilon=-1 and epsilon=+1 records (only {present} present)")]
    MissingLabelSide { present: i8 },

    #[error("corpus has fewer than 2 distinct tokens")]
    DegenerateCorpus,

    #[error("enumerating {count} sequences exceeds the cap of {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("summaries do not share a schema: {0}")]
    SchemaMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    /// Coarse classification used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::LlmUnavailable { .. }
            | Error::UnparsableOutput { .. }
            | Error::CacheMissInReplay { .. } => ErrorKind::Upstream,
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::MalformedBrackets { .. }
            | Error::EmptyDenominator { .. }
            | Error::OracleMiss { .. }
            | Error::AlreadyAnnotated
            | Error::MissingLabelSide { .. }
            | Error::DegenerateCorpus
            | Error::EnumerationTooLarge { .. }
            | Error::SchemaMismatch(_)
            | Error::InvalidInput(_)
            | Error::Io { .. }
            | Error::Json { .. } => ErrorKind::Input,
            Error::LeakedObject { .. } => ErrorKind::Internal,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedBrackets { .. } => "MalformedBrackets",
            Error::LlmUnavailable { .. } => "LlmUnavailable",
            Error::UnparsableOutput { .. } => "UnparsableOutput",
            Error::CacheMissInReplay { .. } => "CacheMissInReplay",
            Error::EmptyDenominator { .. } => "EmptyDenominator",
            Error::OracleMiss { .. } => "OracleMiss",
            Error::AlreadyAnnotated => "AlreadyAnnotated",
            Error::LeakedObject { .. } => "LeakedObject",
            Error::MissingLabelSide { .. } => "MissingLabelSide",
            Error::DegenerateCorpus => "DegenerateCorpus",
            Error::EnumerationTooLarge { .. } => "EnumerationTooLarge",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io { .. } => "Io",
            Error::Json { .. } => "Json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Input,
    Upstream,
    Internal,
}
