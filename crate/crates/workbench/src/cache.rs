//! Content-addressed artifact cache with at most one build per key.
//!
//! A caller that finds a key absent claims it and runs the builder; callers
//! arriving while the build runs wait for its result. Ready artifacts stay
//! in memory and are also written under the cache directory so a restarted
//! process reloads them instead of rebuilding.

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::store::{now, write_atomic, Store};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    LoadedLog,
    LabeledMatrix,
    TrainedModel,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 3] = [ArtifactKind::LoadedLog, ArtifactKind::LabeledMatrix, ArtifactKind::TrainedModel];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::LoadedLog => "loaded_log",
            ArtifactKind::LabeledMatrix => "labeled_matrix",
            ArtifactKind::TrainedModel => "trained_model",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryState {
    Building,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub kind: ArtifactKind,
    pub location: String,
    pub state: EntryState,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounters {
    /// Served from memory.
    pub hits: u64,
    /// Served from the cache directory after a restart.
    pub disk_loads: u64,
    /// Builder invocations.
    pub builds: u64,
    /// Callers that blocked on another caller's build.
    pub waits: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub by_kind: BTreeMap<ArtifactKind, KindCounters>,
    pub builds_by_key: BTreeMap<String, u64>,
}

impl CacheStats {
    pub fn kind(&self, kind: ArtifactKind) -> KindCounters {
        self.by_kind.get(&kind).copied().unwrap_or_default()
    }

    pub fn max_builds_per_key(&self) -> u64 {
        self.builds_by_key.values().copied().max().unwrap_or(0)
    }
}

type Shared = Arc<dyn Any + Send + Sync>;

enum Slot {
    Building,
    Ready(Shared),
}

pub struct Cache {
    dir: PathBuf,
    store: Arc<Store>,
    slots: Mutex<HashMap<(ArtifactKind, String), Slot>>,
    changed: Condvar,
    stats: Mutex<CacheStats>,
}

/// Releases an unfinished claim, also when the builder panics.
struct Claim<'a> {
    cache: &'a Cache,
    id: (ArtifactKind, String),
    done: bool,
}

impl Drop for Claim<'_> {
    fn drop(&mut self) {
        if !self.done {
            self.cache.slots.lock().unwrap_or_else(|p| p.into_inner()).remove(&self.id);
            self.cache.changed.notify_all();
        }
    }
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>, store: Arc<Store>) -> Self {
        Cache {
            dir: dir.into(),
            store,
            slots: Mutex::new(HashMap::new()),
            changed: Condvar::new(),
            stats: Mutex::new(CacheStats::default()),
        }
    }

    pub fn stats(&self) -> CacheStats {
        self.stats.lock().unwrap().clone()
    }

    fn count(&self, kind: ArtifactKind, f: impl FnOnce(&mut KindCounters)) {
        f(self.stats.lock().unwrap().by_kind.entry(kind).or_default());
    }

    fn location(&self, kind: ArtifactKind, key: &str) -> PathBuf {
        self.dir.join(kind.name()).join(format!("{key}.json"))
    }

    /// Reads a ready artifact without building it.
    pub fn peek<T>(&self, kind: ArtifactKind, key: &str) -> Result<Option<Arc<T>>>
    where
        T: DeserializeOwned + Send + Sync + 'static,
    {
        if let Some(Slot::Ready(v)) = self.slots.lock().unwrap().get(&(kind, key.to_string())) {
            return Ok(Some(downcast(v.clone())?));
        }
        let path = self.location(kind, key);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(Arc::new(serde_json::from_slice(&std::fs::read(path)?)?)))
    }

    pub fn get_or_build<T, F>(&self, kind: ArtifactKind, key: &str, build: F) -> Result<Arc<T>>
    where
        T: Serialize + DeserializeOwned + Send + Sync + 'static,
        F: FnOnce() -> Result<T>,
    {
        let id = (kind, key.to_string());
        {
            let mut slots = self.slots.lock().unwrap();
            let mut waited = false;
            loop {
                match slots.get(&id) {
                    Some(Slot::Ready(v)) => {
                        let v = v.clone();
                        drop(slots);
                        self.count(kind, |c| c.hits += 1);
                        return downcast(v);
                    }
                    Some(Slot::Building) => {
                        if !waited {
                            waited = true;
                            self.count(kind, |c| c.waits += 1);
                        }
                        slots = self.changed.wait(slots).unwrap();
                    }
                    None => {
                        slots.insert(id.clone(), Slot::Building);
                        break;
                    }
                }
            }
        }
        let mut claim = Claim { cache: self, id, done: false };

        let path = self.location(kind, key);
        let value: T = match std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok()) {
            Some(v) => {
                self.count(kind, |c| c.disk_loads += 1);
                v
            }
            None => {
                {
                    let mut stats = self.stats.lock().unwrap();
                    stats.by_kind.entry(kind).or_default().builds += 1;
                    *stats.builds_by_key.entry(format!("{}/{key}", kind.name())).or_default() += 1;
                }
                let v = build().inspect_err(|_| self.count(kind, |c| c.failures += 1))?;
                write_atomic(&path, &serde_json::to_vec(&v)?)?;
                self.store.cache.put(
                    &format!("{}/{key}", kind.name()),
                    CacheEntry {
                        key: key.to_string(),
                        kind,
                        location: path.display().to_string(),
                        state: EntryState::Ready,
                        created_at: now(),
                    },
                )?;
                v
            }
        };
        let shared = Arc::new(value);
        self.slots.lock().unwrap().insert(claim.id.clone(), Slot::Ready(shared.clone()));
        claim.done = true;
        self.changed.notify_all();
        Ok(shared)
    }
}

fn downcast<T: Send + Sync + 'static>(v: Shared) -> Result<Arc<T>> {
    v.downcast::<T>().map_err(|_| Error::Storage("cached artifact has an unexpected type".into()))
}
