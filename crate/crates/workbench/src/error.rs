use thiserror::Error;

use crate::xes::XesError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Pipeline(#[from] ppm_core::Error),

    #[error(transparent)]
    Xes(#[from] XesError),

    #[error("{kind} `{key}` not found")]
    NotFound { kind: &'static str, key: String },

    #[error("invalid request: {0}")]
    Invalid(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("storage failure: {0}")]
    Storage(String),

    #[error("worker panicked: {0}")]
    Panic(String),
}

impl Error {
    pub fn not_found(kind: &'static str, key: impl Into<String>) -> Self {
        Error::NotFound { kind, key: key.into() }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Stable machine-readable name of the failure.
    pub fn code(&self) -> &'static str {
        use ppm_core::Error as P;
        match self {
            Error::Pipeline(e) => match e {
                P::Validation(_) => "validation_error",
                P::EmptyLog => "empty_log",
                P::DegenerateSplit { .. } => "degenerate_split",
                P::MissingLabelAttribute { .. } => "missing_label_attribute",
                P::UnknownTrace(_) => "unknown_trace",
                P::EmptyTrainingSet => "empty_training_set",
                P::DegenerateTarget => "degenerate_target",
                P::PopulationTooSmall { .. } => "population_too_small",
                P::SchemaMismatch { .. } => "schema_mismatch",
                P::UpdateUnsupported(_) => "update_unsupported",
                P::GridRequiresFiniteDomains(_) => "grid_requires_finite_domains",
                P::LengthMismatch { .. } => "length_mismatch",
                P::MixedFamilies => "mixed_families",
                P::TooManyFeatures(_) => "too_many_features",
                P::UnknownFeature(_) => "unknown_feature",
            },
            Error::Xes(XesError::Malformed { .. }) => "parse_error",
            Error::Xes(_) => "validation_error",
            Error::NotFound { .. } => "not_found",
            Error::Invalid(_) => "validation_error",
            Error::Conflict(_) => "conflict",
            Error::Storage(_) => "storage_error",
            Error::Panic(_) => "internal_error",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Storage(e.to_string())
    }
}
