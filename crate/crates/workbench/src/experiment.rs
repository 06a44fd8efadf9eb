//! Batch experiments: upload, split, submit and collect in one call.

use std::path::{Path, PathBuf};
use std::time::Duration;

use ppm_core::eval::ComparisonView;
use ppm_core::prelude::*;
use serde::{Deserialize, Serialize};

use crate::orchestrator::{JobRecord, JobStatus};
use crate::service::{Service, SplitRequest};
use crate::store::{LogRecord, SplitRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    pub name: String,
    pub train_fraction: f64,
    #[serde(default = "temporal_start")]
    pub ordering: TraceOrdering,
    #[serde(default)]
    pub filters: Vec<FilterRule>,
}

fn temporal_start() -> TraceOrdering {
    TraceOrdering::TemporalStart
}

/// Config file of `run-experiment`. `log` is relative to the file's
/// directory; `training` is a training request without `split_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub log: PathBuf,
    pub split: SplitSection,
    pub training: serde_json::Value,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        if cfg.log.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.log = dir.join(&cfg.log);
            }
        }
        Ok(cfg)
    }

    pub fn training_request(&self, split_key: &str) -> Result<TrainingRequest> {
        let mut value = self.training.clone();
        let obj = value.as_object_mut().ok_or_else(|| Error::invalid("`training` must be an object"))?;
        obj.insert("split_key".into(), split_key.into());
        serde_json::from_value(value).map_err(|e| Error::invalid(format!("training: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub log: LogRecord,
    pub split: SplitRecord,
    pub jobs: Vec<JobRecord>,
    /// Absent when no job completed.
    pub comparison: Option<ComparisonView>,
}

impl ExperimentOutcome {
    pub fn completed(&self) -> usize {
        self.jobs.iter().filter(|j| j.status == JobStatus::Completed).count()
    }
}

/// Needs running workers; waits up to `timeout` for the batch.
pub fn run_experiment(svc: &Service, cfg: &ExperimentConfig, timeout: Duration) -> Result<ExperimentOutcome> {
    let bytes = std::fs::read(&cfg.log).map_err(|e| Error::invalid(format!("{}: {e}", cfg.log.display())))?;
    let stem = cfg.log.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    let log = svc.upload_log(&bytes, Some(stem))?;
    let split = svc.create_split(&SplitRequest {
        log_id: log.id.clone(),
        name: cfg.split.name.clone(),
        train_fraction: cfg.split.train_fraction,
        ordering: cfg.split.ordering,
        filters: cfg.split.filters.clone(),
    })?;
    let submitted = svc.submit(&cfg.training_request(&split.spec.split_key)?)?;
    if !svc.wait_idle(timeout) {
        return Err(Error::Storage(format!("batch did not finish within {}s", timeout.as_secs())));
    }
    let jobs = submitted.iter().map(|j| svc.job(&j.id)).collect::<Result<Vec<_>>>()?;
    let done: Vec<String> = jobs.iter().filter(|j| j.status == JobStatus::Completed).map(|j| j.id.clone()).collect();
    let comparison = if done.is_empty() { None } else { Some(svc.comparison(&done, None, None)?) };
    Ok(ExperimentOutcome { log, split, jobs, comparison })
}
