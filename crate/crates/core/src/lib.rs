//! Predictive process monitoring over event logs.
//!
//! This crate holds the pure pipeline: trace ordering and splitting, prefix
//! extraction, labeling, feature encoding, learners, hyperparameter search,
//! evaluation metrics and Shapley explanations. It has no IO and builds
//! without `std` (an allocator is required). XES parsing, persistence, the
//! job orchestrator and the HTTP/CLI front doors live in `ppm-workbench`.
//!
//! A typical run goes split → prefix → label → encode → train → evaluate:
//!
//! ```
//! use ppm_core::prelude::*;
//! # fn ts(h: i64) -> Timestamp { Timestamp::from_secs(h * 3600) }
//! # let ev = |a: &str, h| Event::new(a, ts(h));
//! let log = EventLog::new("demo", vec![
//!     Trace::new("t1", vec![ev("A", 0), ev("B", 1), ev("C", 2)]),
//!     Trace::new("t2", vec![ev("A", 1), ev("C", 9)]),
//! ]).unwrap();
//! let prefixes = extract_prefixes(&log, &PrefixSpec::up_to(2, ShortTracePolicy::Discard)).unwrap();
//! let labels = apply_labels(&prefixes, &log, &LabelSpec::next_activity(), None).unwrap();
//! let encoder = fit_encoder(&labels, &EncodingSpec::new(EncodingMethod::SimpleIndex, 2)).unwrap();
//! let matrix = encoder.encode_instances(&labels);
//! assert_eq!(matrix.width(), 2);
//! ```
#![cfg_attr(not(any(feature = "std", test)), no_std)]
extern crate alloc;

pub mod config;
pub mod digest;
pub mod encode;
mod error;
pub mod eval;
pub mod explain;
pub mod hpo;
pub mod label;
pub mod learn;
pub mod log;
mod math;
pub mod split;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::config::{expand_training_request, PipelineConfig, PredictionMethod, TrainingRequest};
    pub use crate::encode::{augment_intercase, fit_encoder, EncodingMethod, EncodingSpec, FeatureMatrix, FittedEncoder};
    pub use crate::eval::{build_comparison, evaluate_classification, evaluate_regression, EvaluationReport, Metric};
    pub use crate::explain::{shapley_exact, shapley_sampled, Attribution, ExplanationView};
    pub use crate::hpo::{optimize, OptimMethod, OptimSpec, TrialRecord};
    pub use crate::label::{apply_labels, resolve_threshold, Label, LabelKind, LabelSpec, LabeledInstance, ThresholdMode};
    pub use crate::learn::{predict, train, update, Algorithm, ModelSpec, Prediction, TaskFamily, TrainedModel};
    pub use crate::log::{compute_stats, AttributeValue, Event, EventLog, LogStats, Timestamp, Trace};
    pub use crate::split::{
        extract_prefixes, filter_traces, order_traces, split_log, FilterRule, PrefixInstance, PrefixMode, PrefixSpec,
        ShortTracePolicy, SplitSpec, TraceOrdering,
    };
    pub use crate::{Error, Result};
}
