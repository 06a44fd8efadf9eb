//! Prediction targets for prefix instances.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::learn::TaskFamily;
use crate::log::{EventLog, Trace};
use crate::split::PrefixInstance;
use crate::{Error, Result};

/// Class emitted by next-activity labeling when the prefix is the whole trace.
pub const END_CLASS: &str = "__END__";
pub const POSITIVE_CLASS: &str = "true";
pub const NEGATIVE_CLASS: &str = "false";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ThresholdMode {
    Custom(f64),
    LogMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelKind {
    CategoricalAttribute { name: String },
    NextActivity,
    DurationBinary { threshold: ThresholdMode },
    NumericAttributeBinary { name: String, threshold: ThresholdMode },
    RemainingTime,
    DurationValue,
    NumericAttributeValue { name: String },
}

impl LabelKind {
    pub fn family(&self) -> TaskFamily {
        match self {
            LabelKind::CategoricalAttribute { .. }
            | LabelKind::NextActivity
            | LabelKind::DurationBinary { .. }
            | LabelKind::NumericAttributeBinary { .. } => TaskFamily::Classification,
            LabelKind::RemainingTime | LabelKind::DurationValue | LabelKind::NumericAttributeValue { .. } => {
                TaskFamily::Regression
            }
        }
    }

    /// Trace attribute the label is read from, if any.
    pub fn target_attribute(&self) -> Option<&str> {
        match self {
            LabelKind::CategoricalAttribute { name }
            | LabelKind::NumericAttributeBinary { name, .. }
            | LabelKind::NumericAttributeValue { name } => Some(name),
            _ => None,
        }
    }

    fn threshold_mode(&self) -> Option<ThresholdMode> {
        match self {
            LabelKind::DurationBinary { threshold } | LabelKind::NumericAttributeBinary { threshold, .. } => Some(*threshold),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LabelKind::CategoricalAttribute { name } => format!("attribute:{name}"),
            LabelKind::NextActivity => "next_activity".into(),
            LabelKind::DurationBinary { .. } => "duration_binary".into(),
            LabelKind::NumericAttributeBinary { name, .. } => format!("attribute_binary:{name}"),
            LabelKind::RemainingTime => "remaining_time".into(),
            LabelKind::DurationValue => "duration".into(),
            LabelKind::NumericAttributeValue { name } => format!("attribute_value:{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub task: TaskFamily,
    pub kind: LabelKind,
}

impl LabelSpec {
    /// A spec whose task is implied by the kind.
    pub fn of(kind: LabelKind) -> Self {
        LabelSpec { task: kind.family(), kind }
    }

    pub fn next_activity() -> Self {
        LabelSpec::of(LabelKind::NextActivity)
    }

    pub fn duration_binary(threshold: ThresholdMode) -> Self {
        LabelSpec::of(LabelKind::DurationBinary { threshold })
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != self.kind.family() {
            return Err(Error::validation(format!(
                "label `{}` is a {} target but the task is {}",
                self.kind.name(),
                self.kind.family(),
                self.task
            )));
        }
        if let Some(ThresholdMode::Custom(v)) = self.kind.threshold_mode() {
            if !v.is_finite() {
                return Err(Error::validation("threshold must be finite"));
            }
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.kind.threshold_mode().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Value(f64),
    Class(String),
}

impl Label {
    pub fn as_class(&self) -> Option<&str> {
        match self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    pub fn as_value(&self) -> Option<f64> {
        match self {
            Label::Value(v) => Some(*v),
            Label::Class(_) => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Value(v) => write!(f, "{v}"),
            Label::Class(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub instance: PrefixInstance,
    pub label: Label,
}

fn numeric_attribute(trace: &Trace, name: &str) -> Option<f64> {
    trace.attributes.get(name).and_then(|v| v.as_f64())
}

/// Threshold for binary kinds: the custom value, or the mean of the
/// thresholded quantity over the given (training) log.
pub fn resolve_threshold(train_log: &EventLog, spec: &LabelSpec) -> Result<f64> {
    let mode = spec
        .kind
        .threshold_mode()
        .ok_or_else(|| Error::validation(format!("label `{}` takes no threshold", spec.kind.name())))?;
    match mode {
        ThresholdMode::Custom(v) => Ok(v),
        ThresholdMode::LogMean => {
            let values: Vec<f64> = match &spec.kind {
                LabelKind::NumericAttributeBinary { name, .. } => {
                    train_log.traces.iter().filter_map(|t| numeric_attribute(t, name)).collect()
                }
                _ => train_log.traces.iter().map(Trace::duration_secs).collect(),
            };
            if values.is_empty() {
                return Err(Error::validation(format!(
                    "cannot average `{}`: no training trace carries a value",
                    spec.kind.name()
                )));
            }
            Ok(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

fn flag(positive: bool) -> Label {
    Label::Class(if positive { POSITIVE_CLASS } else { NEGATIVE_CLASS }.to_string())
}

/// Labels each instance from its full trace in `full_log`.
///
/// The "fast" (≤ threshold) case is the positive class. Any attribute the
/// label is read from is removed from the labeled instance's trace
/// attributes so it cannot leak into the features. Traces lacking the label
/// attribute fail the whole call with every offending trace id listed.
pub fn apply_labels(
    instances: &[PrefixInstance],
    full_log: &EventLog,
    spec: &LabelSpec,
    threshold: Option<f64>,
) -> Result<Vec<LabeledInstance>> {
    spec.validate()?;
    let threshold = match (spec.is_binary(), threshold) {
        (true, Some(t)) => t,
        (true, None) => resolve_threshold(full_log, spec)?,
        (false, _) => 0.0,
    };
    let index = full_log.index();
    let mut missing: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let trace = *index.get(inst.trace_id.as_str()).ok_or_else(|| Error::UnknownTrace(inst.trace_id.clone()))?;
        let label = match &spec.kind {
            LabelKind::CategoricalAttribute { name } => trace.attributes.get(name).map(|v| Label::Class(v.to_string())),
            LabelKind::NextActivity => Some(Label::Class(match trace.events.get(inst.real_len()) {
                Some(e) if inst.prefix_length < trace.len() => e.activity.clone(),
                _ => END_CLASS.to_string(),
            })),
            LabelKind::DurationBinary { .. } => Some(flag(trace.duration_secs() <= threshold)),
            LabelKind::NumericAttributeBinary { name, .. } => numeric_attribute(trace, name).map(|v| flag(v <= threshold)),
            LabelKind::RemainingTime => {
                let remaining = match (trace.end(), inst.last_event()) {
                    (Some(end), Some(last)) => end.secs_since(last.timestamp).max(0.0),
                    (Some(_), None) => trace.duration_secs(),
                    _ => 0.0,
                };
                Some(Label::Value(remaining))
            }
            LabelKind::DurationValue => Some(Label::Value(trace.duration_secs())),
            LabelKind::NumericAttributeValue { name } => numeric_attribute(trace, name).map(Label::Value),
        };
        match label {
            Some(label) => {
                let mut instance = inst.clone();
                if let Some(attr) = spec.kind.target_attribute() {
                    instance.trace_attrs.remove(attr);
                }
                out.push(LabeledInstance { instance, label });
            }
            None => {
                if !missing.contains(&inst.trace_id) {
                    missing.push(inst.trace_id.clone());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLabelAttribute {
            attribute: spec.kind.target_attribute().unwrap_or_default().to_string(),
            traces: missing,
        });
    }
    Ok(out)
}
