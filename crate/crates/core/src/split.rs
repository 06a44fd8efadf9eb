//! Ordering, filtering and splitting logs, and extracting trace prefixes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::digest_of;
use crate::log::{AttributeValue, Event, EventLog, Trace};
use crate::math::ceil;
use crate::{Error, Result};

/// How traces are ordered before the train/test cut.
///
/// `Random` shuffles with ChaCha8 seeded from the given seed, which is
/// reproducible across platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceOrdering {
    TemporalStart,
    TemporalEnd,
    Random { seed: u64 },
    AsIs,
}

pub fn order_traces(log: &EventLog, ordering: TraceOrdering) -> EventLog {
    let mut traces = log.traces.clone();
    match ordering {
        TraceOrdering::TemporalStart => traces.sort_by_key(|t| t.start().map(|s| s.micros)),
        TraceOrdering::TemporalEnd => traces.sort_by_key(|t| t.end().map(|s| s.micros)),
        TraceOrdering::Random { seed } => traces.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        TraceOrdering::AsIs => {}
    }
    log.derive(traces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttributePredicate {
    Equals { value: String },
    NotEquals { value: String },
    /// Inclusive numeric bounds; non-numeric values never match.
    Range { min: Option<f64>, max: Option<f64> },
    Present,
}

impl AttributePredicate {
    fn matches(&self, value: Option<&AttributeValue>) -> bool {
        match (self, value) {
            (AttributePredicate::Present, v) => v.is_some(),
            (AttributePredicate::Equals { value }, Some(v)) => v.to_string() == *value,
            (AttributePredicate::NotEquals { value }, Some(v)) => v.to_string() != *value,
            (AttributePredicate::NotEquals { .. }, None) => true,
            (AttributePredicate::Range { min, max }, Some(v)) => match v.as_f64() {
                Some(x) => min.is_none_or(|m| x >= m) && max.is_none_or(|m| x <= m),
                None => false,
            },
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FilterRule {
    /// Predicate over a trace attribute.
    Attribute { name: String, predicate: AttributePredicate },
    MinLength { length: usize },
    MaxLength { length: usize },
    /// Keep traces whose variant occurs at least `count` times.
    MinVariantFrequency { count: usize },
}

pub fn filter_traces(log: &EventLog, rules: &[FilterRule]) -> Result<EventLog> {
    for rule in rules {
        if let FilterRule::Attribute { name, .. } = rule {
            if !log.traces.iter().any(|t| t.attributes.contains_key(name)) {
                return Err(Error::validation(format!("filter references unknown attribute `{name}`")));
            }
        }
    }
    let mut variant_counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    if rules.iter().any(|r| matches!(r, FilterRule::MinVariantFrequency { .. })) {
        for t in &log.traces {
            *variant_counts.entry(t.variant()).or_default() += 1;
        }
    }
    let keep = |t: &Trace| {
        rules.iter().all(|rule| match rule {
            FilterRule::Attribute { name, predicate } => predicate.matches(t.attributes.get(name)),
            FilterRule::MinLength { length } => t.len() >= *length,
            FilterRule::MaxLength { length } => t.len() <= *length,
            FilterRule::MinVariantFrequency { count } => variant_counts[&t.variant()] >= *count,
        })
    };
    let traces = log.traces.iter().filter(|t| keep(t)).cloned().collect();
    Ok(log.derive(traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub log_ref: String,
    pub name: String,
    pub train_fraction: f64,
    pub ordering: TraceOrdering,
    pub split_key: String,
}

impl SplitSpec {
    pub fn new(log_ref: impl Into<String>, name: impl Into<String>, train_fraction: f64, ordering: TraceOrdering) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::validation(format!("train_fraction must lie in (0,1), got {train_fraction}")));
        }
        let log_ref = log_ref.into();
        let name = name.into();
        let split_key = digest_of(&(&log_ref, train_fraction, ordering, &name));
        Ok(SplitSpec { log_ref, name, train_fraction, ordering, split_key })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: EventLog,
    pub test: EventLog,
    pub spec: SplitSpec,
}

/// Number of leading items that go to the first part of a `fraction` cut.
pub(crate) fn head_count(n: usize, fraction: f64) -> usize {
    (ceil(fraction * n as f64) as usize).min(n)
}

/// Orders the log and cuts it at ⌈fraction·N⌉ traces.
pub fn split_log(log: &EventLog, spec: &SplitSpec) -> Result<SplitResult> {
    if spec.log_ref != log.id {
        return Err(Error::validation(format!("split references log {} but got {}", spec.log_ref, log.id)));
    }
    let ordered = order_traces(log, spec.ordering);
    let cut = head_count(ordered.traces.len(), spec.train_fraction);
    let test_count = ordered.traces.len() - cut;
    if cut == 0 || test_count == 0 {
        return Err(Error::DegenerateSplit { train: cut, test: test_count });
    }
    let mut traces = ordered.traces;
    let test = traces.split_off(cut);
    Ok(SplitResult { train: log.derive(traces), test: log.derive(test), spec: spec.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    Fixed,
    UpTo,
    PerLengthUpTo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortTracePolicy {
    Discard,
    ZeroPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrefixSpec {
    pub mode: PrefixMode,
    pub n: usize,
    pub short_trace_policy: ShortTracePolicy,
}

impl PrefixSpec {
    pub fn fixed(n: usize, policy: ShortTracePolicy) -> Self {
        PrefixSpec { mode: PrefixMode::Fixed, n, short_trace_policy: policy }
    }

    pub fn up_to(n: usize, policy: ShortTracePolicy) -> Self {
        PrefixSpec { mode: PrefixMode::UpTo, n, short_trace_policy: policy }
    }

    pub fn per_length_up_to(n: usize, policy: ShortTracePolicy) -> Self {
        PrefixSpec { mode: PrefixMode::PerLengthUpTo, n, short_trace_policy: policy }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::validation("prefix length n must be at least 1"));
        }
        Ok(())
    }

    /// Short label such as `fixed-5-discard`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            PrefixMode::Fixed => "fixed",
            PrefixMode::UpTo => "up_to",
            PrefixMode::PerLengthUpTo => "per_length_up_to",
        };
        let policy = match self.short_trace_policy {
            ShortTracePolicy::Discard => "discard",
            ShortTracePolicy::ZeroPad => "zero_pad",
        };
        format!("{mode}-{}-{policy}", self.n)
    }
}

/// One position of a prefix: a real event or the reserved padding marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "slot", rename_all = "snake_case")]
pub enum Slot {
    Event(Event),
    Pad,
}

impl Slot {
    pub fn event(&self) -> Option<&Event> {
        match self {
            Slot::Event(e) => Some(e),
            Slot::Pad => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixInstance {
    pub trace_id: String,
    /// Number of slots, padding included.
    pub prefix_length: usize,
    pub slots: Vec<Slot>,
    pub trace_attrs: BTreeMap<String, AttributeValue>,
    pub source_trace_length: usize,
    /// Set for per-length prefix strategies: the length whose model owns
    /// this instance.
    pub bucket: Option<usize>,
}

impl PrefixInstance {
    /// Builds the instance of `trace` truncated (or padded) to `length`.
    pub fn of_trace(trace: &Trace, length: usize) -> Self {
        let mut slots: Vec<Slot> = trace.events.iter().take(length).cloned().map(Slot::Event).collect();
        slots.resize(length, Slot::Pad);
        PrefixInstance {
            trace_id: trace.id.clone(),
            prefix_length: length,
            slots,
            trace_attrs: trace.attributes.clone(),
            source_trace_length: trace.len(),
            bucket: None,
        }
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.slots.iter().filter_map(Slot::event)
    }

    /// Number of real (non-padding) events.
    pub fn real_len(&self) -> usize {
        self.prefix_length.min(self.source_trace_length)
    }

    pub fn last_event(&self) -> Option<&Event> {
        self.events().last()
    }
}

pub fn extract_prefixes(log: &EventLog, spec: &PrefixSpec) -> Result<Vec<PrefixInstance>> {
    spec.validate()?;
    let n = spec.n;
    let pad = spec.short_trace_policy == ShortTracePolicy::ZeroPad;
    let mut out = Vec::new();
    for trace in &log.traces {
        match spec.mode {
            PrefixMode::Fixed => {
                if trace.len() >= n || pad {
                    out.push(PrefixInstance::of_trace(trace, n));
                }
            }
            PrefixMode::UpTo | PrefixMode::PerLengthUpTo => {
                for k in 1..=n.min(trace.len()) {
                    out.push(PrefixInstance::of_trace(trace, k));
                }
                if pad && trace.len() < n {
                    out.push(PrefixInstance::of_trace(trace, n));
                }
            }
        }
    }
    if spec.mode == PrefixMode::PerLengthUpTo {
        for inst in &mut out {
            inst.bucket = Some(inst.prefix_length);
        }
    }
    Ok(out)
}
