//! Accuracy and time metrics, and the comparative views built from them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::label::{Label, POSITIVE_CLASS};
use crate::learn::{Prediction, TaskFamily};
use crate::math::sqrt;
use crate::{Error, Result};

/// Metric name → value. Undefined values (r2 on a constant truth) are NaN
/// in memory and `null` when serialized.
pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    Auc,
    Mae,
    Rmse,
    R2,
}

impl Metric {
    pub const CLASSIFICATION: [Metric; 5] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1, Metric::Auc];
    pub const REGRESSION: [Metric; 3] = [Metric::Mae, Metric::Rmse, Metric::R2];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Auc => "auc",
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::R2 => "r2",
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            Metric::Mae | Metric::Rmse | Metric::R2 => TaskFamily::Regression,
            _ => TaskFamily::Classification,
        }
    }

    /// Error metrics shrink as models improve.
    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Mae | Metric::Rmse)
    }

    pub fn for_family(family: TaskFamily) -> &'static [Metric] {
        match family {
            TaskFamily::Classification => &Metric::CLASSIFICATION,
            TaskFamily::Regression => &Metric::REGRESSION,
        }
    }

    /// Value oriented so that larger is better; undefined becomes -inf.
    pub fn oriented(self, value: f64) -> f64 {
        if value.is_nan() {
            f64::NEG_INFINITY
        } else if self.lower_is_better() {
            -value
        } else {
            value
        }
    }
}

/// Serde helpers mapping NaN to `null` inside metric maps.
pub mod nan_as_null {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Metrics, s: S) -> core::result::Result<S::Ok, S::Error> {
        let view: BTreeMap<&String, Option<f64>> = m.iter().map(|(k, v)| (k, v.is_finite().then_some(*v))).collect();
        view.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<Metrics, D::Error> {
        let raw: BTreeMap<String, Option<f64>> = BTreeMap::deserialize(d)?;
        Ok(raw.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
    }
}

mod nan_map_by_length {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "nan_as_null")] Metrics);

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, Metrics>, s: S) -> core::result::Result<S::Ok, S::Error> {
        let view: BTreeMap<usize, Wrapped> = m.iter().map(|(k, v)| (*k, Wrapped(v.clone()))).collect();
        view.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<BTreeMap<usize, Metrics>, D::Error> {
        let raw: BTreeMap<usize, Wrapped> = BTreeMap::deserialize(d)?;
        Ok(raw.into_iter().map(|(k, v)| (k, v.0)).collect())
    }
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn tally(truth: &[bool], predicted: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (t, p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn)
    }
}

/// Area under the ROC curve via average ranks (ties count one half).
/// 0.5 when either class is absent.
pub fn auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|k| positive[**k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::validation("cannot evaluate zero rows"));
    }
    Ok(())
}

/// Class treated as positive for binary metrics: `"true"` if known, else
/// the second of two sorted classes.
pub fn positive_class_of(classes: &[String]) -> Option<usize> {
    if let Some(i) = classes.iter().position(|c| c == POSITIVE_CLASS) {
        return Some(i);
    }
    (classes.len() == 2).then_some(1)
}

pub fn evaluate_classification(truth: &[Label], pred: &Prediction) -> Result<Metrics> {
    let Prediction::Classification { classes, labels, scores } = pred else {
        return Err(Error::MixedFamilies);
    };
    check_lengths(truth.len(), labels.len())?;
    let truth: Vec<&str> = truth
        .iter()
        .map(|l| l.as_class().ok_or_else(|| Error::validation("classification truth must be categorical")))
        .collect::<Result<_>>()?;
    let correct = truth.iter().zip(labels).filter(|(t, p)| **t == p.as_str()).count();
    let accuracy = correct as f64 / truth.len() as f64;

    let per_class = |c: &str, score_index: Option<usize>| {
        let t: Vec<bool> = truth.iter().map(|x| *x == c).collect();
        let p: Vec<bool> = labels.iter().map(|x| x == c).collect();
        let conf = Confusion::tally(&t, &p);
        let s: Vec<f64> = match score_index {
            Some(i) => scores.iter().map(|row| row[i]).collect(),
            None => vec![0.0; t.len()],
        };
        (conf, auc(&s, &t))
    };

    let mut m = Metrics::new();
    m.insert("accuracy".into(), accuracy);
    if classes.len() == 2 {
        let pos = positive_class_of(classes).unwrap_or(1);
        let (conf, a) = per_class(&classes[pos], Some(pos));
        m.insert("precision".into(), conf.precision());
        m.insert("recall".into(), conf.recall());
        m.insert("f1".into(), conf.f1());
        m.insert("auc".into(), a);
    } else {
        let all: BTreeSet<&str> = classes.iter().map(String::as_str).chain(truth.iter().copied()).collect();
        let (mut p, mut r, mut f, mut a) = (0.0, 0.0, 0.0, 0.0);
        for c in &all {
            let (conf, auc_c) = per_class(c, classes.iter().position(|k| k == c));
            p += conf.precision();
            r += conf.recall();
            f += conf.f1();
            a += auc_c;
        }
        let k = all.len() as f64;
        m.insert("precision".into(), p / k);
        m.insert("recall".into(), r / k);
        m.insert("f1".into(), f / k);
        m.insert("auc".into(), a / k);
    }
    Ok(m)
}

pub fn evaluate_regression(truth: &[f64], pred: &[f64]) -> Result<Metrics> {
    check_lengths(truth.len(), pred.len())?;
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let (mut abs, mut sse, mut sst) = (0.0, 0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        abs += (t - p).abs();
        sse += (t - p) * (t - p);
        sst += (t - mean) * (t - mean);
    }
    let r2 = if truth.len() < 2 || sst == 0.0 { f64::NAN } else { 1.0 - sse / sst };
    let mut m = Metrics::new();
    m.insert("mae".into(), abs / n);
    m.insert("rmse".into(), sqrt(sse / n));
    m.insert("r2".into(), r2);
    Ok(m)
}

/// Metrics for either family.
pub fn evaluate(truth: &[Label], pred: &Prediction) -> Result<Metrics> {
    match pred {
        Prediction::Classification { .. } => evaluate_classification(truth, pred),
        Prediction::Regression { values } => {
            let t: Vec<f64> = truth
                .iter()
                .map(|l| l.as_value().ok_or_else(|| Error::validation("regression truth must be numeric")))
                .collect::<Result<_>>()?;
            evaluate_regression(&t, values)
        }
    }
}

impl Prediction {
    pub fn select(&self, rows: &[usize]) -> Prediction {
        match self {
            Prediction::Classification { classes, labels, scores } => Prediction::Classification {
                classes: classes.clone(),
                labels: rows.iter().map(|&i| labels[i].clone()).collect(),
                scores: rows.iter().map(|&i| scores[i].clone()).collect(),
            },
            Prediction::Regression { values } => {
                Prediction::Regression { values: rows.iter().map(|&i| values[i]).collect() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub training_time: f64,
    pub prediction_time: f64,
    pub elapsed_total: f64,
}

/// The configuration axes a report is compared along.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub identity: String,
    pub algorithm: String,
    pub encoding: String,
    pub prefix: String,
    pub prefix_length: usize,
    pub label: String,
    #[serde(default)]
    pub clustering: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_fingerprint: String,
    pub family: TaskFamily,
    pub task: TaskDescriptor,
    #[serde(with = "nan_as_null")]
    pub metrics: Metrics,
    pub timing: Timing,
    #[serde(with = "nan_map_by_length")]
    pub per_prefix: BTreeMap<usize, Metrics>,
    pub row_count: usize,
}

impl EvaluationReport {
    /// Scores a prediction overall and per prefix length.
    pub fn build(
        model_fingerprint: &str,
        task: TaskDescriptor,
        truth: &[Label],
        prefix_lengths: &[usize],
        pred: &Prediction,
        timing: Timing,
    ) -> Result<Self> {
        check_lengths(truth.len(), prefix_lengths.len())?;
        let family = match pred {
            Prediction::Classification { .. } => TaskFamily::Classification,
            Prediction::Regression { .. } => TaskFamily::Regression,
        };
        let metrics = evaluate(truth, pred)?;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, k) in prefix_lengths.iter().enumerate() {
            groups.entry(*k).or_default().push(i);
        }
        let mut per_prefix = BTreeMap::new();
        for (k, rows) in groups {
            let t: Vec<Label> = rows.iter().map(|&i| truth[i].clone()).collect();
            per_prefix.insert(k, evaluate(&t, &pred.select(&rows))?);
        }
        Ok(EvaluationReport {
            model_fingerprint: model_fingerprint.to_string(),
            family,
            task,
            metrics,
            timing,
            per_prefix,
            row_count: truth.len(),
        })
    }

    /// A metric or timing field by name.
    pub fn value(&self, name: &str) -> Option<f64> {
        match name {
            "training_time" => Some(self.timing.training_time),
            "prediction_time" => Some(self.timing.prediction_time),
            "elapsed_total" => Some(self.timing.elapsed_total),
            _ => self.metrics.get(name).copied(),
        }
    }
}

pub const TIMING_FIELDS: [&str; 3] = ["training_time", "prediction_time", "elapsed_total"];

fn is_time(name: &str) -> bool {
    TIMING_FIELDS.contains(&name)
}

/// Trajectory of one metric for one model across prefix lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub model: String,
    pub metric: String,
    /// `(prefix_length, value)`, ascending in length.
    pub points: Vec<(usize, f64)>,
}

/// Model key shared by reports that differ only in prefix length.
fn series_key(t: &TaskDescriptor) -> String {
    let mut s = format!("{} / {} / {}", t.label, t.algorithm, t.encoding);
    if let Some(c) = &t.clustering {
        s.push_str(" / ");
        s.push_str(c);
    }
    s
}

/// For each model and each metric (timing included), values ordered by
/// prefix length.
pub fn per_prefix_series(reports: &[EvaluationReport]) -> Vec<Series> {
    let mut grouped: BTreeMap<(String, String), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in reports {
        let key = series_key(&r.task);
        let names = r.metrics.keys().map(String::as_str).chain(TIMING_FIELDS);
        for name in names {
            if let Some(v) = r.value(name) {
                grouped.entry((key.clone(), name.to_string())).or_default().insert(r.task.prefix_length, v);
            }
        }
    }
    grouped
        .into_iter()
        .map(|((model, metric), pts)| Series { model, metric, points: pts.into_iter().collect() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: TaskDescriptor,
    pub model_fingerprint: String,
    #[serde(with = "nan_as_null")]
    pub metrics: Metrics,
    pub timing: Timing,
    pub row_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPolygon {
    pub identity: String,
    /// One value in [0, 1] per axis; larger is better on every axis.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Radar {
    pub prefix_length: usize,
    pub axes: Vec<String>,
    pub polygons: Vec<RadarPolygon>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubblePoint {
    pub identity: String,
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleGroup {
    pub group: String,
    pub points: Vec<BubblePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub x_metric: String,
    pub y_metric: String,
    pub size_metric: String,
    pub by_algorithm: Vec<BubbleGroup>,
    pub by_encoding: Vec<BubbleGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortKey {
    pub field: String,
    #[serde(default = "default_true")]
    pub descending: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonView {
    pub family: TaskFamily,
    pub rows: Vec<ComparisonRow>,
    pub per_prefix_series: Vec<Series>,
    pub radar: Radar,
    pub bubble: Bubble,
}

/// Sorts rows by a metric or timing field; NaN sorts last, ties by task
/// identity ascending.
pub fn sort_rows(rows: &mut [ComparisonRow], key: &SortKey) {
    let get = |r: &ComparisonRow| match key.field.as_str() {
        "training_time" => r.timing.training_time,
        "prediction_time" => r.timing.prediction_time,
        "elapsed_total" => r.timing.elapsed_total,
        other => r.metrics.get(other).copied().unwrap_or(f64::NAN),
    };
    rows.sort_by(|a, b| {
        let (x, y) = (get(a), get(b));
        let primary = match (x.is_nan(), y.is_nan()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ if key.descending => y.total_cmp(&x),
            _ => x.total_cmp(&y),
        };
        primary.then_with(|| a.task.identity.cmp(&b.task.identity))
    });
}

fn radar_axes(family: TaskFamily) -> Vec<&'static str> {
    match family {
        TaskFamily::Classification => vec!["accuracy", "precision", "recall", "f1", "auc", "elapsed_total"],
        TaskFamily::Regression => vec!["mae", "rmse", "r2", "elapsed_total"],
    }
}

/// Min-max normalization within the compared set; a constant axis maps to 1.
fn normalize(values: &[f64], invert: bool) -> Vec<f64> {
    let oriented: Vec<f64> = values.iter().map(|v| if invert { -v } else { *v }).collect();
    let finite = oriented.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    oriented
        .iter()
        .map(|v| {
            if !v.is_finite() {
                0.0
            } else if hi - lo <= 0.0 {
                1.0
            } else {
                (v - lo) / (hi - lo)
            }
        })
        .collect()
}

pub fn build_comparison(
    reports: &[EvaluationReport],
    sort: Option<&SortKey>,
    radar_prefix: Option<usize>,
) -> Result<ComparisonView> {
    let Some(first) = reports.first() else {
        return Err(Error::validation("comparison needs at least one report"));
    };
    let family = first.family;
    if reports.iter().any(|r| r.family != family) {
        return Err(Error::MixedFamilies);
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            task: r.task.clone(),
            model_fingerprint: r.model_fingerprint.clone(),
            metrics: r.metrics.clone(),
            timing: r.timing,
            row_count: r.row_count,
        })
        .collect();
    match sort {
        Some(key) => sort_rows(&mut rows, key),
        None => rows.sort_by(|a, b| a.task.identity.cmp(&b.task.identity)),
    }

    let prefix_length = radar_prefix.unwrap_or_else(|| reports.iter().map(|r| r.task.prefix_length).max().unwrap_or(0));
    let chosen: Vec<&ComparisonRow> = rows.iter().filter(|r| r.task.prefix_length == prefix_length).collect();
    let axes = radar_axes(family);
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for axis in &axes {
        let raw: Vec<f64> = chosen
            .iter()
            .map(|r| {
                if is_time(axis) {
                    r.timing.elapsed_total
                } else {
                    r.metrics.get(*axis).copied().unwrap_or(f64::NAN)
                }
            })
            .collect();
        let invert = is_time(axis) || matches!(*axis, "mae" | "rmse");
        columns.push(normalize(&raw, invert));
    }
    let polygons = chosen
        .iter()
        .enumerate()
        .map(|(i, r)| RadarPolygon { identity: r.task.identity.clone(), values: columns.iter().map(|c| c[i]).collect() })
        .collect();
    let radar = Radar { prefix_length, axes: axes.iter().map(|a| a.to_string()).collect(), polygons };

    let (x_metric, y_metric) = match family {
        TaskFamily::Classification => ("auc", "f1"),
        TaskFamily::Regression => ("mae", "r2"),
    };
    let group_by = |f: &dyn Fn(&TaskDescriptor) -> String| {
        let mut groups: BTreeMap<String, Vec<BubblePoint>> = BTreeMap::new();
        for r in &rows {
            groups.entry(f(&r.task)).or_default().push(BubblePoint {
                identity: r.task.identity.clone(),
                x: r.metrics.get(x_metric).copied().unwrap_or(f64::NAN),
                y: r.metrics.get(y_metric).copied().unwrap_or(f64::NAN),
                size: r.timing.elapsed_total,
            });
        }
        groups.into_iter().map(|(group, points)| BubbleGroup { group, points }).collect::<Vec<_>>()
    };
    let bubble = Bubble {
        x_metric: x_metric.into(),
        y_metric: y_metric.into(),
        size_metric: "elapsed_total".into(),
        by_algorithm: group_by(&|t| t.algorithm.clone()),
        by_encoding: group_by(&|t| t.encoding.clone()),
    };
    Ok(ComparisonView { family, rows, per_prefix_series: per_prefix_series(reports), radar, bubble })
}
