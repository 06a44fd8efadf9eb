//! Feature encodings of labeled prefixes.
//!
//! Activity vocabularies map activities to `1..=V` in first-appearance order
//! over the training instances; `0` is padding and `V + 1` stands for any
//! activity not seen during fit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::digest_of;
use crate::label::{Label, LabeledInstance};
use crate::log::{AttributeValue, EventLog, Timestamp, KEY_RESOURCE};
use crate::split::{PrefixInstance, Slot};
use crate::{Error, Result};

pub const PAD_INDEX: f64 = 0.0;
pub const OPEN_CASES: &str = "intercase:open_cases";
pub const RECENT_EVENT_RATE: &str = "intercase:recent_event_rate";
/// Look-back window of the recent-event-rate feature, in seconds.
pub const RECENT_WINDOW_SECS: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMethod {
    Boolean,
    SimpleIndex,
    ComplexIndex,
}

impl EncodingMethod {
    pub fn name(self) -> &'static str {
        match self {
            EncodingMethod::Boolean => "boolean",
            EncodingMethod::SimpleIndex => "simple_index",
            EncodingMethod::ComplexIndex => "complex_index",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub method: EncodingMethod,
    pub padded_length: usize,
    #[serde(default)]
    pub intercase: bool,
}

impl EncodingSpec {
    pub fn new(method: EncodingMethod, padded_length: usize) -> Self {
        EncodingSpec { method, padded_length, intercase: false }
    }

    pub fn with_intercase(mut self) -> Self {
        self.intercase = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.padded_length < 1 {
            return Err(Error::validation("padded_length must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttributeEncoding {
    /// One-hot block over the training levels; unseen levels encode as zeros.
    Categorical { name: String, levels: Vec<String> },
    /// Raw value; event attributes carry an extra presence flag column.
    Numeric { name: String },
}

impl AttributeEncoding {
    pub fn name(&self) -> &str {
        match self {
            AttributeEncoding::Categorical { name, .. } | AttributeEncoding::Numeric { name } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub trace_id: String,
    pub prefix_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<usize>,
    /// Timestamp of the last real event of the prefix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_end: Option<Timestamp>,
}

/// Instance-by-feature table.
///
/// `labels` is either aligned with `rows` or empty (unlabeled matrices built
/// for prediction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub row_meta: Vec<RowMeta>,
}

impl FeatureMatrix {
    pub fn empty(feature_names: Vec<String>) -> Self {
        FeatureMatrix { feature_names, rows: Vec::new(), labels: Vec::new(), row_meta: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.len() == self.rows.len() && !self.rows.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: if self.labels.is_empty() { Vec::new() } else { indices.iter().map(|&i| self.labels[i].clone()).collect() },
            row_meta: indices.iter().map(|&i| self.row_meta[i].clone()).collect(),
        }
    }

    /// Appends `other`'s rows; feature layouts must agree.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_schema(&self.feature_names, &other.feature_names)?;
        let mut out = self.clone();
        out.rows.extend(other.rows.iter().cloned());
        out.labels.extend(other.labels.iter().cloned());
        out.row_meta.extend(other.row_meta.iter().cloned());
        Ok(out)
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

/// Errors with the first differing feature name.
pub fn check_schema(expected: &[String], found: &[String]) -> Result<()> {
    let n = expected.len().max(found.len());
    for i in 0..n {
        let e = expected.get(i).map(String::as_str).unwrap_or("<none>");
        let f = found.get(i).map(String::as_str).unwrap_or("<none>");
        if e != f {
            return Err(Error::SchemaMismatch { index: i, expected: e.to_string(), found: f.to_string() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEncoder {
    pub spec: EncodingSpec,
    pub activities: Vec<String>,
    pub event_attributes: Vec<AttributeEncoding>,
    pub trace_attributes: Vec<AttributeEncoding>,
    pub feature_names: Vec<String>,
}

#[derive(Default)]
struct AttrCollector<'a> {
    order: Vec<&'a str>,
    numeric: BTreeMap<&'a str, bool>,
    levels: BTreeMap<&'a str, Vec<String>>,
    seen: BTreeSet<(&'a str, String)>,
}

impl<'a> AttrCollector<'a> {
    fn observe(&mut self, name: &'a str, value: &AttributeValue) {
        if matches!(value, AttributeValue::Timestamp(_)) {
            return;
        }
        if !self.numeric.contains_key(name) {
            self.order.push(name);
            self.numeric.insert(name, true);
        }
        if !value.is_numeric() {
            self.numeric.insert(name, false);
        }
        let rendered = value.to_string();
        if self.seen.insert((name, rendered.clone())) {
            self.levels.entry(name).or_default().push(rendered);
        }
    }

    fn finish(self) -> Vec<AttributeEncoding> {
        self.order
            .into_iter()
            .map(|name| {
                if self.numeric[name] {
                    AttributeEncoding::Numeric { name: name.to_string() }
                } else {
                    AttributeEncoding::Categorical { name: name.to_string(), levels: self.levels[name].clone() }
                }
            })
            .collect()
    }
}

/// Learns vocabularies and the feature layout from training instances.
///
/// Layouts:
/// * boolean: one column per activity;
/// * simple index: `pos_1..pos_L` activity indices;
/// * complex index: the simple-index columns, then for each position the
///   event attribute columns (`pos_i:attr=level` one-hot, or `pos_i:attr`
///   plus `pos_i:attr?present`), then trace attributes (`trace:attr=level`
///   or `trace:attr`).
pub fn fit_encoder(train: &[LabeledInstance], spec: &EncodingSpec) -> Result<FittedEncoder> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut activities: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut event_attrs = AttrCollector::default();
    let mut trace_attrs = AttrCollector::default();
    for li in train {
        for e in li.instance.events() {
            if seen.insert(e.activity.as_str()) {
                activities.push(e.activity.clone());
            }
            if spec.method == EncodingMethod::ComplexIndex {
                if let Some(r) = &e.resource {
                    event_attrs.observe(KEY_RESOURCE, &AttributeValue::String(r.clone()));
                }
                for (k, v) in &e.payload {
                    event_attrs.observe(k, v);
                }
            }
        }
        if spec.method == EncodingMethod::ComplexIndex {
            for (k, v) in &li.instance.trace_attrs {
                trace_attrs.observe(k, v);
            }
        }
    }
    let event_attributes = event_attrs.finish();
    let trace_attributes = trace_attrs.finish();

    let mut names = Vec::new();
    match spec.method {
        EncodingMethod::Boolean => names.extend(activities.iter().cloned()),
        EncodingMethod::SimpleIndex | EncodingMethod::ComplexIndex => {
            names.extend((1..=spec.padded_length).map(|i| format!("pos_{i}")));
        }
    }
    if spec.method == EncodingMethod::ComplexIndex {
        for i in 1..=spec.padded_length {
            for attr in &event_attributes {
                match attr {
                    AttributeEncoding::Categorical { name, levels } => {
                        names.extend(levels.iter().map(|l| format!("pos_{i}:{name}={l}")));
                    }
                    AttributeEncoding::Numeric { name } => {
                        names.push(format!("pos_{i}:{name}"));
                        names.push(format!("pos_{i}:{name}?present"));
                    }
                }
            }
        }
        for attr in &trace_attributes {
            match attr {
                AttributeEncoding::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("trace:{name}={l}")));
                }
                AttributeEncoding::Numeric { name } => names.push(format!("trace:{name}")),
            }
        }
    }
    Ok(FittedEncoder { spec: *spec, activities, event_attributes, trace_attributes, feature_names: names })
}

impl FittedEncoder {
    pub fn unknown_index(&self) -> usize {
        self.activities.len() + 1
    }

    pub fn activity_index(&self, activity: &str) -> usize {
        self.activities.iter().position(|a| a == activity).map_or(self.unknown_index(), |i| i + 1)
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    /// Feature names of matrices this encoder produces, including the
    /// intercase columns when requested.
    pub fn output_feature_names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        if self.spec.intercase {
            names.push(OPEN_CASES.to_string());
            names.push(RECENT_EVENT_RATE.to_string());
        }
        names
    }

    pub fn encode_row(&self, inst: &PrefixInstance) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.feature_names.len());
        match self.spec.method {
            EncodingMethod::Boolean => {
                let present: BTreeSet<&str> = inst.events().map(|e| e.activity.as_str()).collect();
                row.extend(self.activities.iter().map(|a| if present.contains(a.as_str()) { 1.0 } else { 0.0 }));
            }
            EncodingMethod::SimpleIndex | EncodingMethod::ComplexIndex => {
                for pos in 0..self.spec.padded_length {
                    row.push(match inst.slots.get(pos) {
                        Some(Slot::Event(e)) => self.activity_index(&e.activity) as f64,
                        _ => PAD_INDEX,
                    });
                }
            }
        }
        if self.spec.method == EncodingMethod::ComplexIndex {
            for pos in 0..self.spec.padded_length {
                let event = inst.slots.get(pos).and_then(Slot::event);
                for attr in &self.event_attributes {
                    let value = event.and_then(|e| {
                        if attr.name() == KEY_RESOURCE {
                            e.resource.clone().map(AttributeValue::String)
                        } else {
                            e.payload.get(attr.name()).cloned()
                        }
                    });
                    push_attribute(&mut row, attr, value.as_ref(), true);
                }
            }
            for attr in &self.trace_attributes {
                push_attribute(&mut row, attr, inst.trace_attrs.get(attr.name()), false);
            }
        }
        debug_assert_eq!(row.len(), self.feature_names.len());
        row
    }

    /// Encodes prefixes without labels.
    pub fn encode_prefixes(&self, instances: &[PrefixInstance]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows: instances.iter().map(|i| self.encode_row(i)).collect(),
            labels: Vec::new(),
            row_meta: instances.iter().map(row_meta).collect(),
        }
    }

    pub fn encode_instances(&self, instances: &[LabeledInstance]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows: instances.iter().map(|li| self.encode_row(&li.instance)).collect(),
            labels: instances.iter().map(|li| li.label.clone()).collect(),
            row_meta: instances.iter().map(|li| row_meta(&li.instance)).collect(),
        }
    }

    /// Human-readable rendering of a cell, e.g. the activity behind an index
    /// column or the level of a one-hot column.
    pub fn describe(&self, feature: usize, value: f64) -> String {
        let Some(name) = self.output_feature_names().get(feature).cloned() else {
            return format!("{value}");
        };
        if self.spec.method != EncodingMethod::Boolean && feature < self.spec.padded_length {
            let idx = value as usize;
            return if value == PAD_INDEX {
                "<pad>".to_string()
            } else if idx >= 1 && idx <= self.activities.len() {
                self.activities[idx - 1].clone()
            } else {
                "<unknown>".to_string()
            };
        }
        if let Some((_, level)) = name.split_once('=') {
            if value != 0.0 {
                return level.to_string();
            }
            return format!("not {level}");
        }
        format!("{value}")
    }
}

fn push_attribute(row: &mut Vec<f64>, attr: &AttributeEncoding, value: Option<&AttributeValue>, presence: bool) {
    match attr {
        AttributeEncoding::Categorical { levels, .. } => {
            let rendered = value.map(|v| v.to_string());
            row.extend(levels.iter().map(|l| if rendered.as_deref() == Some(l.as_str()) { 1.0 } else { 0.0 }));
        }
        AttributeEncoding::Numeric { .. } => {
            let x = value.and_then(AttributeValue::as_f64);
            row.push(x.unwrap_or(0.0));
            if presence {
                row.push(if x.is_some() { 1.0 } else { 0.0 });
            }
        }
    }
}

fn row_meta(inst: &PrefixInstance) -> RowMeta {
    RowMeta {
        trace_id: inst.trace_id.clone(),
        prefix_length: inst.prefix_length,
        bucket: inst.bucket,
        prefix_end: inst.last_event().map(|e| e.timestamp),
    }
}

/// Appends `open_cases` (other traces whose [start, end] contains the
/// prefix-end instant) and `recent_event_rate` (events of other traces in the
/// hour up to and including that instant).
pub fn augment_intercase(matrix: &FeatureMatrix, full_log: &EventLog) -> Result<FeatureMatrix> {
    let index = full_log.index();
    let spans: Vec<(&str, i64, i64)> = full_log
        .traces
        .iter()
        .filter_map(|t| Some((t.id.as_str(), t.start()?.micros, t.end()?.micros)))
        .collect();
    // (time, trace) pairs sorted by time for window counts
    let mut events: Vec<(i64, &str)> =
        full_log.traces.iter().flat_map(|t| t.events.iter().map(move |e| (e.timestamp.micros, t.id.as_str()))).collect();
    events.sort_unstable();
    let window = RECENT_WINDOW_SECS * 1_000_000;

    let mut out = matrix.clone();
    out.feature_names.push(OPEN_CASES.to_string());
    out.feature_names.push(RECENT_EVENT_RATE.to_string());
    for (row, meta) in out.rows.iter_mut().zip(&out.row_meta) {
        let trace = index.get(meta.trace_id.as_str()).ok_or_else(|| Error::UnknownTrace(meta.trace_id.clone()))?;
        let at = match meta.prefix_end {
            Some(t) => t.micros,
            None => trace.events.get(meta.prefix_length.min(trace.len()).saturating_sub(1)).map_or(0, |e| e.timestamp.micros),
        };
        let open = spans.iter().filter(|(id, s, e)| *id != meta.trace_id && *s <= at && at <= *e).count();
        let lo = events.partition_point(|(t, _)| *t <= at - window);
        let hi = events.partition_point(|(t, _)| *t <= at);
        let recent = events[lo..hi].iter().filter(|(_, id)| *id != meta.trace_id).count();
        row.push(open as f64);
        row.push(recent as f64);
    }
    Ok(out)
}
