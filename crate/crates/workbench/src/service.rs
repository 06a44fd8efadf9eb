//! Operations behind both the HTTP API and the CLI.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use ppm_core::eval::{ComparisonView, SortKey};
use ppm_core::explain::{explain_event, explain_log, explain_trace, sample_background, ExplainOptions, BACKGROUND_SIZE};
use ppm_core::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{Cache, CacheStats};
use crate::export::{matrix_csv, results_csv};
use crate::orchestrator::{JobFilter, JobRecord, Orchestrator, PoolStatus};
use crate::pipeline::{LabeledData, LoadedSplit, ModelArtifact, Pipeline};
use crate::settings::Settings;
use crate::store::{now, write_atomic, LogRecord, ModelRecord, ReportRecord, SplitRecord, Store};
use crate::xes::{parse_timestamp, parse_xes, serialize_xes};
use crate::{Error, Result};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRequest {
    pub log_id: String,
    pub name: String,
    pub train_fraction: f64,
    #[serde(default = "default_ordering")]
    pub ordering: TraceOrdering,
    #[serde(default)]
    pub filters: Vec<FilterRule>,
}

fn default_ordering() -> TraceOrdering {
    TraceOrdering::TemporalStart
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsQuery {
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: Option<usize>,
    #[serde(default)]
    pub split_key: Option<String>,
    #[serde(default)]
    pub algorithm: Option<String>,
    #[serde(default)]
    pub encoding: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsPage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<ReportRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationLevel {
    Event,
    Trace,
    Log,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRequest {
    pub level: ExplanationLevel,
    /// Model fingerprint.
    pub model: String,
    #[serde(default)]
    pub trace_id: Option<String>,
    #[serde(default)]
    pub prefix_length: Option<usize>,
    #[serde(default)]
    pub feature: Option<String>,
    #[serde(default)]
    pub part: Part,
    #[serde(default)]
    pub permutations: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDocument {
    pub activity: String,
    /// ISO-8601 instant with offset.
    pub timestamp: String,
    #[serde(default)]
    pub resource: Option<String>,
    #[serde(default)]
    pub payload: BTreeMap<String, AttributeValue>,
}

/// A running or finished case submitted for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttributeValue>,
    pub events: Vec<EventDocument>,
}

impl TraceDocument {
    pub fn from_trace(t: &Trace) -> Self {
        TraceDocument {
            id: t.id.clone(),
            attributes: t.attributes.clone(),
            events: t
                .events
                .iter()
                .map(|e| EventDocument {
                    activity: e.activity.clone(),
                    timestamp: crate::xes::format_timestamp(e.timestamp),
                    resource: e.resource.clone(),
                    payload: e.payload.clone(),
                })
                .collect(),
        }
    }

    pub fn to_trace(&self) -> Result<Trace> {
        let events = self
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let timestamp = parse_timestamp(&e.timestamp)
                    .ok_or_else(|| Error::invalid(format!("event {}: `{}` is not a timestamp", i + 1, e.timestamp)))?;
                Ok(Event { activity: e.activity.clone(), timestamp, resource: e.resource.clone(), payload: e.payload.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trace { id: self.id.clone(), events, attributes: self.attributes.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub trace: TraceDocument,
    /// Prefix to predict at; the longest the model's prefix strategy allows
    /// when absent.
    #[serde(default)]
    pub prefix_length: Option<usize>,
    #[serde(default)]
    pub explain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model_fingerprint: String,
    pub trace_id: String,
    pub prefix_length: usize,
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<ExplanationView>,
}

pub struct Service {
    settings: Settings,
    store: Arc<Store>,
    cache: Arc<Cache>,
    orchestrator: Arc<Orchestrator>,
}

impl Service {
    /// Opens the store and cache; workers are started separately.
    pub fn open(settings: Settings) -> Result<Arc<Self>> {
        let store = Arc::new(Store::open(&settings.storage_dir)?);
        let cache = Arc::new(Cache::new(&settings.cache_dir, store.clone()));
        let orchestrator = Orchestrator::new(store.clone(), cache.clone())?;
        Ok(Arc::new(Service { settings, store, cache, orchestrator }))
    }

    pub fn start_workers(&self) {
        self.orchestrator.start(self.settings.workers);
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn orchestrator(&self) -> &Arc<Orchestrator> {
        &self.orchestrator
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn pool_status(&self) -> PoolStatus {
        self.orchestrator.pool_status()
    }

    pub fn wait_idle(&self, timeout: Duration) -> bool {
        self.orchestrator.wait_idle(timeout)
    }

    fn pipeline(&self) -> Pipeline<'_> {
        Pipeline { store: &self.store, cache: &self.cache }
    }

    pub fn upload_log(&self, bytes: &[u8], name: Option<&str>) -> Result<LogRecord> {
        let log = parse_xes(bytes, name.unwrap_or("uploaded"))?;
        let stats = compute_stats(&log)?;
        if let Some(existing) = self.store.logs.get(&log.id) {
            return Ok(existing);
        }
        write_atomic(&self.store.log_object(&log.id), &serialize_xes(&log))?;
        let record = LogRecord { id: log.id.clone(), name: log.name.clone(), stats, uploaded_at: now() };
        Ok(self.store.logs.put_new(&log.id, record)?.0)
    }

    pub fn logs(&self) -> Vec<LogRecord> {
        let mut logs = self.store.logs.list();
        logs.sort_by(|a, b| b.uploaded_at.cmp(&a.uploaded_at).then(a.id.cmp(&b.id)));
        logs
    }

    pub fn log(&self, id: &str) -> Result<LogRecord> {
        self.store.logs.get(id).ok_or_else(|| Error::not_found("log", id))
    }

    fn read_log(&self, id: &str) -> Result<EventLog> {
        Ok(parse_xes(&self.store.read_object(&self.store.log_object(id))?, "")?)
    }

    pub fn create_split(&self, req: &SplitRequest) -> Result<SplitRecord> {
        let spec = SplitSpec::new(req.log_id.clone(), req.name.clone(), req.train_fraction, req.ordering)?;
        if let Some(existing) = self.store.splits.get(&spec.split_key) {
            if existing.filters != req.filters {
                return Err(Error::Conflict(format!(
                    "split `{}` already exists with different filters; choose another name",
                    req.name
                )));
            }
            return Ok(existing);
        }
        self.log(&req.log_id)?;
        let log = self.read_log(&req.log_id)?;
        let filtered = filter_traces(&log, &req.filters)?;
        let result = split_log(&filtered, &SplitSpec { log_ref: filtered.id.clone(), ..spec.clone() })?;
        write_atomic(&self.store.split_object(&spec.split_key, "train"), &serialize_xes(&result.train))?;
        write_atomic(&self.store.split_object(&spec.split_key, "test"), &serialize_xes(&result.test))?;
        let record = SplitRecord {
            spec: spec.clone(),
            filters: req.filters.clone(),
            train_traces: result.train.traces.len(),
            test_traces: result.test.traces.len(),
            created_at: now(),
        };
        Ok(self.store.splits.put_new(&spec.split_key, record)?.0)
    }

    pub fn splits(&self, log_id: Option<&str>) -> Vec<SplitRecord> {
        let mut out: Vec<SplitRecord> =
            self.store.splits.list().into_iter().filter(|s| log_id.is_none_or(|l| s.spec.log_ref == l)).collect();
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(a.spec.split_key.cmp(&b.spec.split_key)));
        out
    }

    pub fn split(&self, key: &str) -> Result<SplitRecord> {
        self.store.splits.get(key).ok_or_else(|| Error::not_found("split", key))
    }

    pub fn submit(&self, req: &TrainingRequest) -> Result<Vec<JobRecord>> {
        let configs = expand_training_request(req)?;
        self.orchestrator.validate_and_enqueue(&configs)
    }

    pub fn submit_configs(&self, configs: &[PipelineConfig]) -> Result<Vec<JobRecord>> {
        self.orchestrator.validate_and_enqueue(configs)
    }

    pub fn jobs(&self, filter: &JobFilter) -> Vec<JobRecord> {
        self.orchestrator.query_jobs(filter)
    }

    pub fn job(&self, id: &str) -> Result<JobRecord> {
        self.orchestrator.job(id)
    }

    /// Reports of completed jobs, newest first.
    pub fn results(&self, q: &ResultsQuery) -> ResultsPage {
        let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
        let offset = q.offset.unwrap_or(0);
        let eq = |want: &Option<String>, have: &str| want.as_deref().is_none_or(|w| w == have);
        let (total, items) = self.store.reports.scan(|rows| {
            let mut matching: Vec<&ReportRecord> = rows
                .values()
                .filter(|r| {
                    eq(&q.algorithm, &r.report.task.algorithm)
                        && eq(&q.encoding, &r.report.task.encoding)
                        && eq(&q.label, &r.report.task.label)
                })
                .filter(|r| {
                    q.split_key.is_none() || self.store.jobs.get(&r.job_id).is_some_and(|j| eq(&q.split_key, &j.config.split_key))
                })
                .collect();
            matching.sort_by(|a, b| b.seq.cmp(&a.seq));
            let total = matching.len();
            (total, matching.into_iter().skip(offset).take(limit).cloned().collect())
        });
        ResultsPage { total, offset, limit, items }
    }

    fn reports_for(&self, ids: &[String]) -> Result<Vec<ReportRecord>> {
        if ids.is_empty() {
            let mut all = self.store.reports.list();
            all.sort_by_key(|r| r.seq);
            return Ok(all);
        }
        ids.iter()
            .map(|id| {
                self.store.reports.get(id).ok_or_else(|| match self.store.jobs.get(id) {
                    Some(j) => Error::invalid(format!("job {id} has no report (status {})", j.status.name())),
                    None => Error::not_found("job", id),
                })
            })
            .collect()
    }

    /// Comparison over the given jobs' reports, or over every report.
    pub fn comparison(&self, ids: &[String], sort: Option<&SortKey>, radar_prefix: Option<usize>) -> Result<ComparisonView> {
        let records = self.reports_for(ids)?;
        let reports: Vec<EvaluationReport> = records.into_iter().map(|r| r.report).collect();
        Ok(build_comparison(&reports, sort, radar_prefix)?)
    }

    pub fn export_csv(&self, ids: &[String]) -> Result<String> {
        results_csv(&self.reports_for(ids)?)
    }

    fn model_record(&self, fingerprint: &str) -> Result<ModelRecord> {
        self.store.models.get(fingerprint).ok_or_else(|| Error::not_found("model", fingerprint))
    }

    /// Split, labeled data and model behind a stored model; cache hits in
    /// the common case.
    fn model_context(&self, fingerprint: &str) -> Result<(ModelRecord, Arc<LoadedSplit>, Arc<LabeledData>, Arc<ModelArtifact>)> {
        let record = self.model_record(fingerprint)?;
        let p = self.pipeline();
        let split = p.loaded_split(&record.config.split_key)?;
        let data = p.labeled(&record.config, &split)?;
        let model = p.model(&record.config, &data)?;
        Ok((record, split, data, model))
    }

    pub fn matrix_csv(&self, fingerprint: &str, part: Part) -> Result<String> {
        let (_, _, data, _) = self.model_context(fingerprint)?;
        matrix_csv(match part {
            Part::Train => &data.train,
            Part::Test => &data.test,
        })
    }

    pub fn explain(&self, req: &ExplanationRequest) -> Result<ExplanationView> {
        let (_, _, data, artifact) = self.model_context(&req.model)?;
        let model = &artifact.model;
        let matrix = match req.part {
            Part::Train => &data.train,
            Part::Test => &data.test,
        };
        let defaults = ExplainOptions::default();
        let opts = ExplainOptions {
            permutations: req.permutations.unwrap_or(defaults.permutations),
            seed: req.seed.unwrap_or(defaults.seed),
        };
        let background = || sample_background(&data.train, BACKGROUND_SIZE, opts.seed);
        let trace_rows = |trace: &str| -> Result<Vec<usize>> {
            let rows: Vec<usize> = (0..matrix.len()).filter(|&i| matrix.row_meta[i].trace_id == trace).collect();
            if rows.is_empty() {
                return Err(Error::not_found("trace", trace));
            }
            Ok(rows)
        };
        let need_trace = || req.trace_id.as_deref().ok_or_else(|| Error::invalid("`trace_id` is required at this level"));
        match req.level {
            ExplanationLevel::Event => {
                let rows = trace_rows(need_trace()?)?;
                let row = match req.prefix_length {
                    Some(k) => *rows
                        .iter()
                        .find(|&&i| matrix.row_meta[i].prefix_length == k)
                        .ok_or_else(|| Error::invalid(format!("no instance with prefix length {k}")))?,
                    None => *rows.iter().max_by_key(|&&i| matrix.row_meta[i].prefix_length).expect("non-empty"),
                };
                Ok(explain_event(model, matrix, row, &background(), Some(&data.encoder), &opts)?)
            }
            ExplanationLevel::Trace => {
                let rows = trace_rows(need_trace()?)?;
                Ok(explain_trace(model, &matrix.select(&rows), &background(), &opts)?)
            }
            ExplanationLevel::Log => {
                let feature = req.feature.as_deref().ok_or_else(|| Error::invalid("`feature` is required at log level"))?;
                Ok(explain_log(model, matrix, feature, Some(&data.encoder))?)
            }
        }
    }

    pub fn predict(&self, fingerprint: &str, req: &PredictRequest) -> Result<PredictResponse> {
        let (record, split, data, artifact) = self.model_context(fingerprint)?;
        let config = &record.config;
        let trace = req.trace.to_trace()?;
        let single = EventLog::new("request", vec![trace.clone()]).map_err(|e| Error::invalid(e.to_string()))?;
        let prefixes = extract_prefixes(&single, &config.prefix)?;
        let chosen = match req.prefix_length {
            Some(k) => prefixes.into_iter().find(|p| p.prefix_length == k),
            None => prefixes.into_iter().max_by_key(|p| p.prefix_length),
        }
        .ok_or_else(|| {
            Error::invalid(format!("trace `{}` yields no prefix under the model's strategy {}", trace.id, config.prefix.label()))
        })?;
        let mut matrix = data.encoder.encode_prefixes(std::slice::from_ref(&chosen));
        if config.encoding.intercase {
            let mut traces: Vec<Trace> = split.full.traces.iter().filter(|t| t.id != trace.id).cloned().collect();
            traces.push(single.traces[0].clone());
            matrix = augment_intercase(&matrix, &split.full.derive(traces))?;
        }
        let prediction = predict(&artifact.model, &matrix)?;
        let explanation = if req.explain {
            let opts = ExplainOptions::default();
            let background = sample_background(&data.train, BACKGROUND_SIZE, opts.seed);
            Some(explain_event(&artifact.model, &matrix, 0, &background, Some(&data.encoder), &opts)?)
        } else {
            None
        };
        Ok(PredictResponse {
            model_fingerprint: fingerprint.to_string(),
            trace_id: trace.id,
            prefix_length: chosen.prefix_length,
            prediction,
            explanation,
        })
    }

    pub fn shutdown(&self) {
        self.orchestrator.shutdown();
    }
}
