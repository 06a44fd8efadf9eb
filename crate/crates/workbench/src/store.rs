//! Durable single-node object store.
//!
//! Each table is a directory of JSON documents, one per key, mirrored in
//! memory. Writes go to a temporary file that is renamed over the target,
//! so a reader of the directory never sees a half-written record. Record
//! updates on one table are serialized by the table's lock.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use ppm_core::eval::EvaluationReport;
use ppm_core::hpo::TrialRecord;
use ppm_core::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cache::CacheEntry;
use crate::orchestrator::JobRecord;
use crate::{Error, Result};

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Keys become file names verbatim when they are plain identifiers and are
/// hex-escaped otherwise.
fn file_stem(key: &str) -> String {
    if !key.is_empty() && key.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
        key.to_string()
    } else {
        format!("x-{}", key.bytes().map(|b| format!("{b:02x}")).collect::<String>())
    }
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| Error::Storage(format!("{} has no parent", path.display())))?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.{:?}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("object"),
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct Table<T> {
    dir: PathBuf,
    rows: RwLock<BTreeMap<String, T>>,
}

impl<T: Serialize + DeserializeOwned + Clone> Table<T> {
    fn open(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        let mut rows = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let doc: Stored<T> = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?;
                rows.insert(doc.key, doc.value);
            }
        }
        Ok(Table { dir, rows: RwLock::new(rows) })
    }

    fn persist(&self, key: &str, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec(&Stored { key: key.to_string(), value })?;
        write_atomic(&self.dir.join(format!("{}.json", file_stem(key))), &bytes)
    }

    pub fn get(&self, key: &str) -> Option<T> {
        self.rows.read().unwrap().get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.rows.read().unwrap().contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.rows.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn list(&self) -> Vec<T> {
        self.rows.read().unwrap().values().cloned().collect()
    }

    /// Applies `f` to every record under the read lock.
    pub fn scan<R>(&self, f: impl FnOnce(&BTreeMap<String, T>) -> R) -> R {
        f(&self.rows.read().unwrap())
    }

    pub fn put(&self, key: &str, value: T) -> Result<()> {
        let mut rows = self.rows.write().unwrap();
        self.persist(key, &value)?;
        rows.insert(key.to_string(), value);
        Ok(())
    }

    /// Inserts unless the key exists; returns the stored record either way.
    pub fn put_new(&self, key: &str, value: T) -> Result<(T, bool)> {
        let mut rows = self.rows.write().unwrap();
        if let Some(existing) = rows.get(key) {
            return Ok((existing.clone(), false));
        }
        self.persist(key, &value)?;
        rows.insert(key.to_string(), value.clone());
        Ok((value, true))
    }

    /// Read-modify-write of one record. Nothing is written when `f` fails.
    pub fn update<R>(&self, key: &str, f: impl FnOnce(&mut T) -> Result<R>) -> Result<R> {
        let mut rows = self.rows.write().unwrap();
        let mut value = rows.get(key).cloned().ok_or_else(|| Error::not_found("record", key))?;
        let out = f(&mut value)?;
        self.persist(key, &value)?;
        rows.insert(key.to_string(), value);
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct Stored<V> {
    key: String,
    value: V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: String,
    pub name: String,
    pub stats: LogStats,
    pub uploaded_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub spec: SplitSpec,
    #[serde(default)]
    pub filters: Vec<FilterRule>,
    pub train_traces: usize,
    pub test_traces: usize,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub fingerprint: String,
    /// Job that first produced the model.
    pub job_id: String,
    pub config: PipelineConfig,
    pub encoder_digest: String,
    pub training_time: f64,
    #[serde(default)]
    pub trials: Vec<TrialRecord>,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub job_id: String,
    pub seq: u64,
    pub created_at: String,
    pub report: EvaluationReport,
}

pub struct Store {
    root: PathBuf,
    pub logs: Table<LogRecord>,
    pub splits: Table<SplitRecord>,
    pub jobs: Table<JobRecord>,
    pub models: Table<ModelRecord>,
    pub reports: Table<ReportRecord>,
    pub cache: Table<CacheEntry>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let t = |name: &str| root.join("tables").join(name);
        Ok(Store {
            logs: Table::open(t("log"))?,
            splits: Table::open(t("split"))?,
            jobs: Table::open(t("job"))?,
            models: Table::open(t("model"))?,
            reports: Table::open(t("report"))?,
            cache: Table::open(t("cache"))?,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_object(&self, id: &str) -> PathBuf {
        self.root.join("objects").join("logs").join(format!("{}.xes", file_stem(id)))
    }

    pub fn split_object(&self, split_key: &str, part: &str) -> PathBuf {
        self.root.join("objects").join("splits").join(file_stem(split_key)).join(format!("{part}.xes"))
    }

    pub fn read_object(&self, path: &Path) -> Result<Vec<u8>> {
        fs::read(path).map_err(|e| Error::Storage(format!("{}: {e}", path.display())))
    }

    /// Every foreign reference resolves. Returns the dangling ones.
    pub fn dangling_references(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in self.splits.list() {
            if !self.logs.contains(&s.spec.log_ref) {
                out.push(format!("split {} -> log {}", s.spec.split_key, s.spec.log_ref));
            }
        }
        for j in self.jobs.list() {
            if !self.splits.contains(&j.config.split_key) {
                out.push(format!("job {} -> split {}", j.id, j.config.split_key));
            }
            if let Some(r) = &j.result {
                if !self.models.contains(&r.model_fingerprint) {
                    out.push(format!("job {} -> model {}", j.id, r.model_fingerprint));
                }
                if !self.reports.contains(&r.report_id) {
                    out.push(format!("job {} -> report {}", j.id, r.report_id));
                }
            }
        }
        for m in self.models.list() {
            if !self.jobs.contains(&m.job_id) {
                out.push(format!("model {} -> job {}", m.fingerprint, m.job_id));
            }
        }
        for r in self.reports.list() {
            if !self.jobs.contains(&r.job_id) {
                out.push(format!("report {} -> job", r.job_id));
            }
            if !self.models.contains(&r.report.model_fingerprint) {
                out.push(format!("report {} -> model {}", r.job_id, r.report.model_fingerprint));
            }
        }
        out
    }
}
