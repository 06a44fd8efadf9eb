//! Storage, job orchestration and the HTTP and CLI front ends for the
//! predictive monitoring pipeline.

pub mod cache;
pub mod error;
pub mod experiment;
pub mod export;
pub mod http;
pub mod orchestrator;
pub mod pipeline;
pub mod service;
pub mod settings;
pub mod store;
pub mod synth;
pub mod xes;

pub use error::{Error, Result};
