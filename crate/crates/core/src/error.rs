use std::fmt;

/// Errors raised while loading, validating or evaluating models and hardware.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The document does not match the expected schema.
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    /// The layer graph is malformed (dangling edges, cycles, duplicate ids).
    #[error("structural error: {0}")]
    Structure(StructuralError),

    /// A value is present and well-typed but violates a model invariant.
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Inputs are individually valid but do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric argument is outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuralError {
    DanglingEdge { layer: String, predecessor: String },
    DuplicateId(String),
    Cycle(Vec<String>),
}

impl fmt::Display for StructuralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructuralError::DanglingEdge { layer, predecessor } => {
                write!(f, "layer `{layer}` lists unknown predecessor `{predecessor}`")
            }
            StructuralError::DuplicateId(id) => write!(f, "duplicate layer id `{id}`"),
            StructuralError::Cycle(ids) => write!(f, "cycle through {}", ids.join(" -> ")),
        }
    }
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
