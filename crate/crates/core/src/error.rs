use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("unknown label '{label}' at line {line}")]
    UnknownLabel { label: String, line: usize },

    #[error("duplicate id '{0}'")]
    DuplicateId(String),

    #[error("post '{0}' has no label")]
    MissingLabel(String),

    #[error("post '{0}' has empty text")]
    EmptyText(String),

    #[error("need at least {required} posts to split, got {actual}")]
    TooFewPosts { required: usize, actual: usize },

    #[error("id sets differ; symmetric difference: {}", .0.join(", "))]
    IdSetMismatch(Vec<String>),

    #[error("cannot decode image '{path}': {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("backend '{0}' is unavailable (pretrained weights are not installed)")]
    BackendUnavailable(String),

    #[error("no caption for post '{0}'")]
    MissingCaption(String),

    #[error("captions file '{0}' not found")]
    CaptionsUnavailable(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("region tensor of {requested} elements exceeds the configured cap of {cap}")]
    MemoryCap { requested: usize, cap: usize },

    #[error("unknown fusion strategy '{0}'")]
    UnknownStrategy(String),

    #[error("strategy has no attention weights")]
    NoAttention,

    #[error("label '{0}' has zero count; class weight is undefined")]
    ZeroCount(&'static str),

    #[error("non-finite loss at epoch {epoch} (batch ids: {}; parameter norm {param_norm})", .batch_ids.join(", "))]
    NonFiniteLoss {
        epoch: usize,
        batch_ids: Vec<String>,
        param_norm: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown post id '{0}'")]
    UnknownId(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the caller's inputs rather than by a bug
    /// or the environment.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. } | Error::Json(_) | Error::Image(_))
    }
}
