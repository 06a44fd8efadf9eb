use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty log has no statistics")]
    EmptyLog,

    #[error("degenerate split: {train} train / {test} test traces")]
    DegenerateSplit { train: usize, test: usize },

    #[error("missing label attribute `{attribute}` on traces: {}", traces.join(", "))]
    MissingLabelAttribute { attribute: String, traces: Vec<String> },

    #[error("unknown trace `{0}`")]
    UnknownTrace(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("degenerate target: training labels contain a single class")]
    DegenerateTarget,

    #[error("k = {k} exceeds the population of {population} rows")]
    PopulationTooSmall { k: usize, population: usize },

    #[error("schema mismatch at feature {index}: expected `{expected}`, found `{found}`")]
    SchemaMismatch { index: usize, expected: String, found: String },

    #[error("incremental update unsupported for {0}")]
    UpdateUnsupported(&'static str),

    #[error("grid requires finite domains (`{0}` is a continuous range)")]
    GridRequiresFiniteDomains(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("mixed task families in comparison")]
    MixedFamilies,

    #[error("{0} features exceed the exact enumeration bound of 12; use sampled mode")]
    TooManyFeatures(usize),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
