use std::path::PathBuf;

/// One field-level problem found while validating a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("token {0} is not part of the prompt")]
    TokenNotFound(u32),

    #[error("latent is already at the clean end of the schedule")]
    AlreadyClean,

    #[error("object has zero transparency mass")]
    DegenerateObject,

    #[error("layer state mismatch: {0}")]
    State(String),

    #[error("scenario validation failed: {}", join_fields(.0))]
    Validation(Vec<FieldError>),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_fields(errs: &[FieldError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::Shape { expected: expected.to_string(), found: found.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
