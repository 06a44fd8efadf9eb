//! Shapley attributions for a single row, a trace's prefixes, or a whole log.
//!
//! The value of a coalition is the model output with coalition features
//! taken from the explained row and the others from a background row,
//! averaged over the background set.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{check_schema, FeatureMatrix, FittedEncoder};
use crate::learn::{TaskFamily, TrainedModel};
use crate::math::argmax;
use crate::{Error, Result};

/// Largest feature count explained by full coalition enumeration.
pub const EXACT_LIMIT: usize = 12;
/// Background rows drawn from the training matrix.
pub const BACKGROUND_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    pub base_value: f64,
    pub instance_output: f64,
}

impl Attribution {
    /// `base_value + Σ values − instance_output`.
    pub fn efficiency_gap(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>() - self.instance_output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub feature: String,
    pub value: f64,
    /// Human reading of the value, such as `pos_2=Triage`.
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub feature: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGroup {
    pub value: String,
    pub mean_prediction: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum ExplanationView {
    Event {
        trace_id: String,
        prefix_length: usize,
        explained_class: Option<String>,
        attribution: Attribution,
        inputs: Vec<FeatureValue>,
    },
    Trace {
        trace_id: String,
        explained_class: Option<String>,
        prefix_lengths: Vec<usize>,
        series: Vec<FeatureSeries>,
    },
    Log {
        feature: String,
        explained_class: Option<String>,
        groups: Vec<ValueGroup>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainOptions {
    /// Permutations for the sampled estimator (used above the exact limit).
    pub permutations: usize,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions { permutations: 200, seed: 0 }
    }
}

fn check_inputs(names: &[String], row: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if names.len() != row.len() {
        return Err(Error::LengthMismatch { left: names.len(), right: row.len() });
    }
    if background.is_empty() {
        return Err(Error::validation("background set is empty"));
    }
    if let Some(b) = background.iter().find(|b| b.len() != row.len()) {
        return Err(Error::LengthMismatch { left: row.len(), right: b.len() });
    }
    Ok(())
}

fn mean_output(f: &dyn Fn(&[f64]) -> f64, rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
}

/// Exact Shapley values by enumerating all 2^M coalitions.
pub fn shapley_exact(
    f: &dyn Fn(&[f64]) -> f64,
    feature_names: &[String],
    row: &[f64],
    background: &[Vec<f64>],
) -> Result<Attribution> {
    check_inputs(feature_names, row, background)?;
    let m = row.len();
    if m > EXACT_LIMIT {
        return Err(Error::TooManyFeatures(m));
    }
    let full = 1usize << m;
    let mut value = vec![0.0; full];
    let mut mixed = vec![0.0; m];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut total = 0.0;
        for b in background {
            for j in 0..m {
                mixed[j] = if mask >> j & 1 == 1 { row[j] } else { b[j] };
            }
            total += f(&mixed);
        }
        *v = total / background.len() as f64;
    }
    // weight(s) = s!(m-s-1)!/m!
    let mut weight = vec![0.0; m.max(1)];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut x = 1.0 / m as f64;
        for t in 1..=s {
            x *= t as f64 / (m - t) as f64;
        }
        *w = x;
    }
    let mut values = vec![0.0; m];
    for (i, phi) in values.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..full {
            if mask & bit == 0 {
                *phi += weight[mask.count_ones() as usize] * (value[mask | bit] - value[mask]);
            }
        }
    }
    Ok(Attribution {
        feature_names: feature_names.to_vec(),
        values,
        base_value: value[0],
        instance_output: value[full - 1],
    })
}

/// Monte-Carlo permutation estimate. Each permutation walks from every
/// background row to the explained row one feature at a time; any rounding
/// residual against the efficiency identity is spread evenly.
pub fn shapley_sampled(
    f: &dyn Fn(&[f64]) -> f64,
    feature_names: &[String],
    row: &[f64],
    background: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    check_inputs(feature_names, row, background)?;
    if permutations < 1 {
        return Err(Error::validation("permutations must be at least 1"));
    }
    let m = row.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut values = vec![0.0; m];
    let mut walk = vec![0.0; m];
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        for b in background {
            walk.copy_from_slice(b);
            let mut prev = f(&walk);
            for &j in &order {
                walk[j] = row[j];
                let next = f(&walk);
                values[j] += next - prev;
                prev = next;
            }
        }
    }
    let draws = (permutations * background.len()) as f64;
    values.iter_mut().for_each(|v| *v /= draws);
    let base_value = mean_output(f, background);
    let instance_output = f(row);
    if m > 0 {
        let residual = instance_output - base_value - values.iter().sum::<f64>();
        values.iter_mut().for_each(|v| *v += residual / m as f64);
    }
    Ok(Attribution { feature_names: feature_names.to_vec(), values, base_value, instance_output })
}

/// Exact up to [`EXACT_LIMIT`] features, sampled above.
pub fn shapley(
    f: &dyn Fn(&[f64]) -> f64,
    feature_names: &[String],
    row: &[f64],
    background: &[Vec<f64>],
    opts: &ExplainOptions,
) -> Result<Attribution> {
    if row.len() <= EXACT_LIMIT {
        shapley_exact(f, feature_names, row, background)
    } else {
        shapley_sampled(f, feature_names, row, background, opts.permutations, opts.seed)
    }
}

/// Up to `max` rows drawn without replacement, seeded.
pub fn sample_background(matrix: &FeatureMatrix, max: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..matrix.len()).collect();
    if idx.len() > max {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(max);
        idx.sort_unstable();
    }
    idx.into_iter().map(|i| matrix.rows[i].clone()).collect()
}

fn bucket_of(matrix: &FeatureMatrix, i: usize) -> Option<usize> {
    matrix.row_meta.get(i).and_then(|m| m.bucket.or(Some(m.prefix_length)))
}

/// Class whose score is explained over `rows`: `"true"` (or the second of
/// two classes) when available, else the class predicted most often.
fn explained_class(model: &TrainedModel, matrix: &FeatureMatrix, rows: &[usize]) -> Option<usize> {
    if model.family() == TaskFamily::Regression {
        return None;
    }
    if let Some(p) = model.positive_class() {
        return Some(p);
    }
    let mut votes = vec![0.0; model.classes.len()];
    for &i in rows {
        votes[argmax(&model.output_row(&matrix.rows[i], bucket_of(matrix, i)))] += 1.0;
    }
    Some(argmax(&votes))
}

fn class_name(model: &TrainedModel, class: Option<usize>) -> Option<String> {
    class.map(|c| model.classes[c].clone())
}

fn attribute_row(
    model: &TrainedModel,
    matrix: &FeatureMatrix,
    i: usize,
    class: Option<usize>,
    background: &[Vec<f64>],
    opts: &ExplainOptions,
) -> Result<Attribution> {
    let bucket = bucket_of(matrix, i);
    let f = |r: &[f64]| model.scalar_output(r, bucket, class.unwrap_or(0));
    shapley(&f, &model.feature_names, &matrix.rows[i], background, opts)
}

/// Attribution for one encoded prefix, with its inputs rendered through the
/// encoder when given.
pub fn explain_event(
    model: &TrainedModel,
    matrix: &FeatureMatrix,
    row: usize,
    background: &[Vec<f64>],
    encoder: Option<&FittedEncoder>,
    opts: &ExplainOptions,
) -> Result<ExplanationView> {
    check_schema(&model.feature_names, &matrix.feature_names)?;
    if row >= matrix.len() {
        return Err(Error::validation("row index out of range"));
    }
    let class = explained_class(model, matrix, &[row]);
    let attribution = attribute_row(model, matrix, row, class, background, opts)?;
    let inputs = matrix.rows[row]
        .iter()
        .enumerate()
        .map(|(j, v)| FeatureValue {
            feature: matrix.feature_names[j].clone(),
            value: *v,
            rendered: match encoder {
                Some(e) if j < e.feature_names.len() => e.describe(j, *v),
                _ => alloc::format!("{}={}", matrix.feature_names[j], v),
            },
        })
        .collect();
    let meta = matrix.row_meta.get(row);
    Ok(ExplanationView::Event {
        trace_id: meta.map(|m| m.trace_id.clone()).unwrap_or_default(),
        prefix_length: meta.map_or(0, |m| m.prefix_length),
        explained_class: class_name(model, class),
        attribution,
        inputs,
    })
}

/// Attribution series over the prefixes of one trace. `matrix` holds one
/// row per prefix length of that trace.
pub fn explain_trace(
    model: &TrainedModel,
    matrix: &FeatureMatrix,
    background: &[Vec<f64>],
    opts: &ExplainOptions,
) -> Result<ExplanationView> {
    check_schema(&model.feature_names, &matrix.feature_names)?;
    if matrix.is_empty() {
        return Err(Error::validation("trace has no prefixes to explain"));
    }
    let mut rows: Vec<usize> = (0..matrix.len()).collect();
    rows.sort_by_key(|&i| matrix.row_meta.get(i).map_or(i, |m| m.prefix_length));
    let lengths: Vec<usize> = rows.iter().map(|&i| matrix.row_meta.get(i).map_or(i + 1, |m| m.prefix_length)).collect();
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("prefix lengths of a trace must be distinct"));
    }
    let class = explained_class(model, matrix, &rows[rows.len() - 1..]);
    let mut series: Vec<FeatureSeries> =
        model.feature_names.iter().map(|n| FeatureSeries { feature: n.clone(), values: Vec::new() }).collect();
    for &i in &rows {
        let a = attribute_row(model, matrix, i, class, background, opts)?;
        for (s, v) in series.iter_mut().zip(a.values) {
            s.values.push(v);
        }
    }
    Ok(ExplanationView::Trace {
        trace_id: matrix.row_meta.first().map(|m| m.trace_id.clone()).unwrap_or_default(),
        explained_class: class_name(model, class),
        prefix_lengths: lengths,
        series,
    })
}

/// Groups `predictions` by the paired raw value, first-seen order kept
/// stable by sorting on the value text.
pub fn aggregate_by_value(values: &[String], predictions: &[f64]) -> Result<Vec<ValueGroup>> {
    if values.len() != predictions.len() {
        return Err(Error::LengthMismatch { left: values.len(), right: predictions.len() });
    }
    let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (v, p) in values.iter().zip(predictions) {
        let g = groups.entry(v.as_str()).or_insert((0.0, 0));
        g.0 += p;
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(value, (sum, count))| ValueGroup { value: value.to_string(), mean_prediction: sum / count as f64, count })
        .collect())
}

/// Mean explained output per value of one feature across `matrix` rows.
pub fn explain_log(
    model: &TrainedModel,
    matrix: &FeatureMatrix,
    feature: &str,
    encoder: Option<&FittedEncoder>,
) -> Result<ExplanationView> {
    check_schema(&model.feature_names, &matrix.feature_names)?;
    let j = matrix.feature_index(feature).ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    let rows: Vec<usize> = (0..matrix.len()).collect();
    let class = explained_class(model, matrix, &rows);
    let rendered: Vec<String> = matrix
        .rows
        .iter()
        .map(|r| match encoder {
            Some(e) if j < e.feature_names.len() => e.describe(j, r[j]),
            _ => alloc::format!("{feature}={}", r[j]),
        })
        .collect();
    let preds: Vec<f64> =
        rows.iter().map(|&i| model.scalar_output(&matrix.rows[i], bucket_of(matrix, i), class.unwrap_or(0))).collect();
    Ok(ExplanationView::Log {
        feature: feature.to_string(),
        explained_class: class_name(model, class),
        groups: aggregate_by_value(&rendered, &preds)?,
    })
}
