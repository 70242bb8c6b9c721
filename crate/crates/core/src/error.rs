use thiserror::Error;

/// Errors raised by curve construction, ledger estimation, simulation and the
/// adjustment engine. Every variant that concerns a named input carries its id.
#[derive(Debug, Error)]
pub enum XvaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid {entity} '{id}': {reason}")]
    Validation {
        entity: &'static str,
        id: String,
        reason: String,
    },

    #[error("unknown {entity} '{id}'")]
    Missing { entity: &'static str, id: String },

    #[error("{entity} '{id}' covers times up to {horizon} but {required} is required")]
    Horizon {
        entity: &'static str,
        id: String,
        horizon: f64,
        required: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("run metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("malformed input: {0}")]
    Parse(#[from] serde_json::Error),
}

impl XvaError {
    pub(crate) fn invalid(entity: &'static str, id: impl Into<String>, reason: impl Into<String>) -> Self {
        XvaError::Validation {
            entity,
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn missing(entity: &'static str, id: impl Into<String>) -> Self {
        XvaError::Missing {
            entity,
            id: id.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, XvaError>;
