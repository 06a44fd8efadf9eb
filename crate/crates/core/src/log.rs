//! Event log model: typed attributes, events, traces and log profiling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::digest_of;
use crate::{Error, Result};

pub const KEY_ACTIVITY: &str = "concept:name";
pub const KEY_TIMESTAMP: &str = "time:timestamp";
pub const KEY_RESOURCE: &str = "org:resource";

const MICROS_PER_SEC: i64 = 1_000_000;

/// An instant with the UTC offset it was recorded in.
///
/// Ordering and arithmetic use the instant only; the offset is kept so that
/// formatting reproduces the original rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    /// Microseconds since the Unix epoch, UTC.
    pub micros: i64,
    /// Offset east of UTC, in seconds.
    pub offset_secs: i32,
}

impl Timestamp {
    pub const fn from_micros(micros: i64) -> Self {
        Timestamp { micros, offset_secs: 0 }
    }

    pub const fn from_secs(secs: i64) -> Self {
        Timestamp::from_micros(secs * MICROS_PER_SEC)
    }

    pub const fn with_offset(self, offset_secs: i32) -> Self {
        Timestamp { offset_secs, ..self }
    }

    pub fn as_secs_f64(self) -> f64 {
        self.micros as f64 / MICROS_PER_SEC as f64
    }

    /// `self - earlier` in seconds.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.micros - earlier.micros) as f64 / MICROS_PER_SEC as f64
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.micros.cmp(&other.micros).then(self.offset_secs.cmp(&other.offset_secs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    String,
    Integer,
    Real,
    Boolean,
    Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AttributeValue {
    String(String),
    Integer(i64),
    Real(f64),
    Boolean(bool),
    Timestamp(Timestamp),
}

impl AttributeValue {
    pub fn kind(&self) -> AttributeKind {
        match self {
            AttributeValue::String(_) => AttributeKind::String,
            AttributeValue::Integer(_) => AttributeKind::Integer,
            AttributeValue::Real(_) => AttributeKind::Real,
            AttributeValue::Boolean(_) => AttributeKind::Boolean,
            AttributeValue::Timestamp(_) => AttributeKind::Timestamp,
        }
    }

    /// Numeric view of integer and real payloads.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttributeValue::Integer(i) => Some(*i as f64),
            AttributeValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, AttributeValue::Integer(_) | AttributeValue::Real(_))
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::String(s) => f.write_str(s),
            AttributeValue::Integer(i) => write!(f, "{i}"),
            AttributeValue::Real(r) => write!(f, "{r}"),
            AttributeValue::Boolean(b) => write!(f, "{b}"),
            AttributeValue::Timestamp(t) => write!(f, "{}", t.micros),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub activity: String,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payload: BTreeMap<String, AttributeValue>,
}

impl Event {
    pub fn new(activity: impl Into<String>, timestamp: Timestamp) -> Self {
        Event { activity: activity.into(), timestamp, resource: None, payload: BTreeMap::new() }
    }

    pub fn with_resource(mut self, resource: impl Into<String>) -> Self {
        self.resource = Some(resource.into());
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: AttributeValue) -> Self {
        self.payload.insert(key.into(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl Trace {
    pub fn new(id: impl Into<String>, events: Vec<Event>) -> Self {
        Trace { id: id.into(), events, attributes: BTreeMap::new() }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: AttributeValue) -> Self {
        self.attributes.insert(key.into(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.events.first().map(|e| e.timestamp)
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.timestamp)
    }

    /// Seconds between first and last event; 0 for empty traces.
    pub fn duration_secs(&self) -> f64 {
        match (self.start(), self.end()) {
            (Some(s), Some(e)) => e.secs_since(s),
            _ => 0.0,
        }
    }

    /// Activity sequence, the variant key of the trace.
    pub fn variant(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.activity.as_str()).collect()
    }

    fn sort_events(&mut self) {
        // stable: equal instants keep file order
        self.events.sort_by_key(|e| e.timestamp.micros);
    }
}

/// A validated, immutable-by-convention event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub id: String,
    pub name: String,
    pub traces: Vec<Trace>,
}

impl EventLog {
    /// Validates traces, sorts each trace's events by time (stable) and
    /// derives the content id.
    pub fn new(name: impl Into<String>, mut traces: Vec<Trace>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for trace in &mut traces {
            if !seen.insert(trace.id.clone()) {
                return Err(Error::validation(format!("duplicate trace id `{}`", trace.id)));
            }
            if let Some(pos) = trace.events.iter().position(|e| e.activity.is_empty()) {
                return Err(Error::validation(format!(
                    "trace `{}`: event {} has an empty activity",
                    trace.id,
                    pos + 1
                )));
            }
            trace.sort_events();
        }
        let id = content_id(&traces);
        Ok(EventLog { id, name: name.into(), traces })
    }

    /// A log over a subset or reordering of this log's traces.
    pub fn derive(&self, traces: Vec<Trace>) -> EventLog {
        EventLog { id: content_id(&traces), name: self.name.clone(), traces }
    }

    pub fn trace(&self, id: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.id == id)
    }

    /// Lookup table from trace id to trace.
    pub fn index(&self) -> BTreeMap<&str, &Trace> {
        self.traces.iter().map(|t| (t.id.as_str(), t)).collect()
    }

    pub fn event_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    /// Distinct activities in first-appearance order.
    pub fn event_classes(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in self.traces.iter().flat_map(|t| &t.events) {
            if seen.insert(e.activity.as_str()) {
                out.push(e.activity.clone());
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

/// The id is a digest of the traces only; the display name is metadata.
fn content_id(traces: &[Trace]) -> String {
    digest_of(traces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeScope {
    Trace,
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub name: String,
    pub scope: AttributeScope,
    pub kind: AttributeKind,
    pub distinct: usize,
    pub fill_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStats {
    pub trace_count: usize,
    pub event_count: usize,
    pub event_classes: Vec<String>,
    pub trace_length: LengthSummary,
    pub time_start: Option<Timestamp>,
    pub time_end: Option<Timestamp>,
    pub attributes: Vec<AttributeProfile>,
    pub resource_contention: f64,
    pub parallelism: f64,
    pub sparsity: f64,
}

/// Profiles a log.
///
/// * `parallelism`: total case time divided by the measure of the union of
///   case intervals, i.e. the mean number of open cases while any case is
///   open. When every case is instantaneous, the mean over cases of how
///   many cases are open at that case's start.
/// * `resource_contention`: the same statistic per resource over the
///   intervals each case spends with that resource, averaged across
///   resources (0 when no resource is recorded).
/// * `sparsity`: absent cells over the trace-attribute table plus the
///   event-attribute table, each sized rows × union of attribute names.
pub fn compute_stats(log: &EventLog) -> Result<LogStats> {
    if log.traces.is_empty() {
        return Err(Error::EmptyLog);
    }
    let lengths: Vec<usize> = log.traces.iter().map(Trace::len).collect();
    let event_count: usize = lengths.iter().sum();
    let trace_length = LengthSummary {
        min: *lengths.iter().min().unwrap_or(&0),
        mean: event_count as f64 / lengths.len() as f64,
        max: *lengths.iter().max().unwrap_or(&0),
    };

    let intervals: Vec<(i64, i64)> = log
        .traces
        .iter()
        .filter_map(|t| Some((t.start()?.micros, t.end()?.micros)))
        .collect();
    let parallelism = mean_overlap(&intervals).max(1.0);

    let mut per_resource: BTreeMap<&str, Vec<(i64, i64)>> = BTreeMap::new();
    for trace in &log.traces {
        let mut spans: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
        for e in &trace.events {
            if let Some(r) = e.resource.as_deref() {
                let t = e.timestamp.micros;
                spans.entry(r).and_modify(|s| s.1 = s.1.max(t)).or_insert((t, t));
            }
        }
        for (r, span) in spans {
            per_resource.entry(r).or_default().push(span);
        }
    }
    let resource_contention = if per_resource.is_empty() {
        0.0
    } else {
        per_resource.values().map(|v| mean_overlap(v)).sum::<f64>() / per_resource.len() as f64
    };

    let (attributes, sparsity) = profile_attributes(log, event_count);

    let mut time_start = None;
    let mut time_end = None;
    for t in &log.traces {
        if let (Some(s), Some(e)) = (t.start(), t.end()) {
            time_start = Some(time_start.map_or(s, |c: Timestamp| if s.micros < c.micros { s } else { c }));
            time_end = Some(time_end.map_or(e, |c: Timestamp| if e.micros > c.micros { e } else { c }));
        }
    }

    Ok(LogStats {
        trace_count: log.traces.len(),
        event_count,
        event_classes: log.event_classes(),
        trace_length,
        time_start,
        time_end,
        attributes,
        resource_contention,
        parallelism,
        sparsity,
    })
}

/// Mean number of simultaneously open intervals, swept over sorted endpoints.
fn mean_overlap(intervals: &[(i64, i64)]) -> f64 {
    if intervals.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<(i64, i64)> = intervals.to_vec();
    sorted.sort_unstable();
    let total: i128 = sorted.iter().map(|(s, e)| (*e - *s) as i128).sum();
    let mut union: i128 = 0;
    let (mut cur_s, mut cur_e) = sorted[0];
    for &(s, e) in &sorted[1..] {
        if s > cur_e {
            union += (cur_e - cur_s) as i128;
            cur_s = s;
            cur_e = e;
        } else if e > cur_e {
            cur_e = e;
        }
    }
    union += (cur_e - cur_s) as i128;
    if union > 0 {
        return total as f64 / union as f64;
    }
    // all instantaneous: count cases open at each case start
    let mut open = 0usize;
    for &(s, _) in &sorted {
        open += sorted.iter().filter(|(a, b)| *a <= s && s <= *b).count();
    }
    open as f64 / sorted.len() as f64
}

fn profile_attributes(log: &EventLog, event_count: usize) -> (Vec<AttributeProfile>, f64) {
    struct Acc {
        kind: AttributeKind,
        present: usize,
        values: BTreeSet<String>,
    }
    let mut trace_acc: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut event_acc: BTreeMap<&str, Acc> = BTreeMap::new();
    fn record<'a>(acc: &mut BTreeMap<&'a str, Acc>, name: &'a str, value: &AttributeValue) {
        let a = acc.entry(name).or_insert_with(|| Acc { kind: value.kind(), present: 0, values: BTreeSet::new() });
        a.present += 1;
        a.values.insert(value.to_string());
    }
    for trace in &log.traces {
        for (k, v) in &trace.attributes {
            record(&mut trace_acc, k.as_str(), v);
        }
    }
    for e in log.traces.iter().flat_map(|t| &t.events) {
        if let Some(r) = &e.resource {
            let a = event_acc.entry(KEY_RESOURCE).or_insert_with(|| Acc {
                kind: AttributeKind::String,
                present: 0,
                values: BTreeSet::new(),
            });
            a.present += 1;
            a.values.insert(r.clone());
        }
        for (k, v) in &e.payload {
            record(&mut event_acc, k.as_str(), v);
        }
    }

    let traces = log.traces.len();
    let mut cells = traces * trace_acc.len() + event_count * event_acc.len();
    let mut present = 0usize;
    let mut profiles = Vec::new();
    for (scope, acc, rows) in [(AttributeScope::Trace, &trace_acc, traces), (AttributeScope::Event, &event_acc, event_count)]
    {
        for (name, a) in acc {
            present += a.present;
            profiles.push(AttributeProfile {
                name: name.to_string(),
                scope,
                kind: a.kind,
                distinct: a.values.len(),
                fill_rate: if rows == 0 { 0.0 } else { a.present as f64 / rows as f64 },
            });
        }
    }
    if cells == 0 {
        cells = 1;
        present = 1;
    }
    (profiles, (cells - present) as f64 / cells as f64)
}
