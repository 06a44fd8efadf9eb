//! Model construction: fit, predict and incrementally update.
//!
//! Five algorithms serve both task families. A model may additionally be
//! clustered (k-means routing to one submodel per cluster) or bucketed (one
//! model per prefix length, chosen from the rows' bucket tags).

mod ensemble;
mod kmeans;
mod knn;
mod linear;
mod params;
mod tree;

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use ensemble::{Boosted, Forest, Loss};
pub use kmeans::KMeans;
pub use knn::Knn;
pub use linear::{Linear, LinearKind};
pub use params::{Assignment, Domain, HpValue, HyperparameterSpace};
pub use tree::{Node, Tree};

use crate::encode::{check_schema, FeatureMatrix};
use crate::label::{Label, POSITIVE_CLASS};
use crate::math::{argmax, ceil, sqrt};
use crate::{Error, Result};
use ensemble::tree_rng;
use params::Params;
use tree::{Target, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Classification,
    Regression,
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFamily::Classification => "classification",
            TaskFamily::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DecisionTree,
    RandomForest,
    GradientBoostedTrees,
    LogisticOrLinearSgd,
    Knn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::DecisionTree,
        Algorithm::RandomForest,
        Algorithm::GradientBoostedTrees,
        Algorithm::LogisticOrLinearSgd,
        Algorithm::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DecisionTree => "decision_tree",
            Algorithm::RandomForest => "random_forest",
            Algorithm::GradientBoostedTrees => "gradient_boosted_trees",
            Algorithm::LogisticOrLinearSgd => "logistic_or_linear_sgd",
            Algorithm::Knn => "knn",
        }
    }

    /// Whether `update` can take further passes on new data.
    pub fn supports_update(self) -> bool {
        self == Algorithm::LogisticOrLinearSgd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Clustering {
    Kmeans { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: TaskFamily,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<Clustering>,
    /// Explicit assignment; missing entries take the algorithm defaults.
    #[serde(default)]
    pub hyperparameters: Assignment,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: TaskFamily, algorithm: Algorithm) -> Self {
        ModelSpec { family, algorithm, clustering: None, hyperparameters: Assignment::new(), seed: 0 }
    }

    pub fn with(mut self, name: &str, value: impl Into<HpValue>) -> Self {
        self.hyperparameters.insert(name.to_string(), value.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_clustering(mut self, clustering: Clustering) -> Self {
        self.clustering = Some(clustering);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithm.resolve(&self.hyperparameters)?;
        if let Some(Clustering::Kmeans { k }) = self.clustering {
            if k == 0 {
                return Err(Error::validation("kmeans needs k >= 1"));
            }
        }
        Ok(())
    }

    /// The full assignment used for fitting, defaults included.
    pub fn resolved(&self) -> Result<Assignment> {
        self.algorithm.resolve(&self.hyperparameters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimator {
    Tree(Tree),
    Forest(Forest),
    Boosted(Boosted),
    Linear(Linear),
    Knn(Knn),
    /// Fixed output: a cluster or bucket with one class, or no rows at all.
    Constant { output: Vec<f64> },
}

impl Estimator {
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        match self {
            Estimator::Tree(t) => t.predict_row(row).to_vec(),
            Estimator::Forest(f) => f.predict_row(row),
            Estimator::Boosted(b) => b.predict_row(row),
            Estimator::Linear(l) => l.predict_row(row),
            Estimator::Knn(k) => k.predict_row(row),
            Estimator::Constant { output } => output.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState {
    Single { estimator: Estimator },
    Clustered { kmeans: KMeans, members: Vec<Estimator> },
    /// One state per prefix-length bucket, ascending.
    PerLength { buckets: Vec<(usize, ModelState)> },
}

impl ModelState {
    fn output(&self, row: &[f64], bucket: Option<usize>) -> Vec<f64> {
        match self {
            ModelState::Single { estimator } => estimator.predict_row(row),
            ModelState::Clustered { kmeans, members } => members[kmeans.assign(row)].predict_row(row),
            ModelState::PerLength { buckets } => buckets[route_bucket(buckets, bucket)].1.output(row, bucket),
        }
    }
}

/// Largest bucket not above the requested one, else the smallest.
fn route_bucket(buckets: &[(usize, ModelState)], bucket: Option<usize>) -> usize {
    let b = bucket.unwrap_or(usize::MAX);
    buckets.iter().rposition(|(k, _)| *k <= b).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    /// Sorted class labels (classification only).
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub encoder_ref: String,
    pub config_fingerprint: String,
    pub training_time: f64,
    pub state: ModelState,
}

impl TrainedModel {
    pub fn with_provenance(mut self, encoder_ref: impl Into<String>, config_fingerprint: impl Into<String>) -> Self {
        self.encoder_ref = encoder_ref.into();
        self.config_fingerprint = config_fingerprint.into();
        self
    }

    pub fn family(&self) -> TaskFamily {
        self.spec.family
    }

    /// Raw output for one row: class scores, or a single regression value.
    pub fn output_row(&self, row: &[f64], bucket: Option<usize>) -> Vec<f64> {
        let mut out = self.state.output(row, bucket);
        if self.family() == TaskFamily::Classification {
            let sum: f64 = out.iter().sum();
            if sum > 0.0 {
                out.iter_mut().for_each(|v| *v /= sum);
            }
        }
        out
    }

    /// Class whose score is explained and used for binary metrics: `"true"`
    /// when present, otherwise the second class of a binary model.
    pub fn positive_class(&self) -> Option<usize> {
        if let Some(i) = self.classes.iter().position(|c| c == POSITIVE_CLASS) {
            return Some(i);
        }
        (self.classes.len() == 2).then_some(1)
    }

    /// The scalar a Shapley explanation attributes: score of `class`
    /// (classification) or the prediction itself (regression).
    pub fn scalar_output(&self, row: &[f64], bucket: Option<usize>, class: usize) -> f64 {
        let out = self.output_row(row, bucket);
        match self.family() {
            TaskFamily::Classification => out[class],
            TaskFamily::Regression => out[0],
        }
    }

    /// Loss of a gradient-descent model on `matrix`; `None` for other
    /// algorithms or composite states.
    pub fn sgd_loss(&self, matrix: &FeatureMatrix) -> Option<f64> {
        let ModelState::Single { estimator: Estimator::Linear(l) } = &self.state else {
            return None;
        };
        let prepared = prepare_targets(matrix, self.family(), Some(&self.classes)).ok()?;
        Some(l.loss(&matrix.rows, &prepared.target()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Prediction {
    Classification { classes: Vec<String>, labels: Vec<String>, scores: Vec<Vec<f64>> },
    Regression { values: Vec<f64> },
}

impl Prediction {
    pub fn len(&self) -> usize {
        match self {
            Prediction::Classification { labels, .. } => labels.len(),
            Prediction::Regression { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Predicted labels as [`Label`]s.
    pub fn labels(&self) -> Vec<Label> {
        match self {
            Prediction::Classification { labels, .. } => labels.iter().cloned().map(Label::Class).collect(),
            Prediction::Regression { values } => values.iter().copied().map(Label::Value).collect(),
        }
    }
}

struct Prepared {
    classes: Vec<String>,
    y_class: Vec<usize>,
    y_value: Vec<f64>,
}

impl Prepared {
    fn target(&self) -> Target<'_> {
        if self.classes.is_empty() {
            Target::Values(&self.y_value)
        } else {
            Target::Classes { y: &self.y_class, n_classes: self.classes.len() }
        }
    }

    fn subset(&self, rows: &[usize]) -> Prepared {
        Prepared {
            classes: self.classes.clone(),
            y_class: if self.classes.is_empty() { Vec::new() } else { rows.iter().map(|&i| self.y_class[i]).collect() },
            y_value: if self.classes.is_empty() { rows.iter().map(|&i| self.y_value[i]).collect() } else { Vec::new() },
        }
    }
}

fn prepare_targets(matrix: &FeatureMatrix, family: TaskFamily, known: Option<&[String]>) -> Result<Prepared> {
    if matrix.labels.len() != matrix.rows.len() {
        return Err(Error::LengthMismatch { left: matrix.rows.len(), right: matrix.labels.len() });
    }
    match family {
        TaskFamily::Classification => {
            let mut raw = Vec::with_capacity(matrix.labels.len());
            for l in &matrix.labels {
                raw.push(l.as_class().ok_or_else(|| Error::validation("classification needs categorical labels"))?);
            }
            let classes: Vec<String> = match known {
                Some(k) => k.to_vec(),
                None => raw.iter().copied().collect::<BTreeSet<_>>().into_iter().map(String::from).collect(),
            };
            let mut y_class = Vec::with_capacity(raw.len());
            for c in raw {
                let idx = classes
                    .iter()
                    .position(|k| k == c)
                    .ok_or_else(|| Error::validation(format!("label `{c}` is not a class of the model")))?;
                y_class.push(idx);
            }
            Ok(Prepared { classes, y_class, y_value: Vec::new() })
        }
        TaskFamily::Regression => {
            let mut y_value = Vec::with_capacity(matrix.labels.len());
            for l in &matrix.labels {
                let v = l.as_value().ok_or_else(|| Error::validation("regression needs numeric labels"))?;
                if !v.is_finite() {
                    return Err(Error::validation("regression labels must be finite"));
                }
                y_value.push(v);
            }
            Ok(Prepared { classes: Vec::new(), y_class: Vec::new(), y_value })
        }
    }
}

fn fit_estimator(x: &[Vec<f64>], target: &Target, spec: &ModelSpec, hp: &Assignment, seed: u64) -> Estimator {
    let p = Params(hp);
    let tree_params = |max_features| TreeParams {
        max_depth: p.int("max_depth"),
        min_samples_split: p.int("min_samples_split").max(2),
        min_samples_leaf: p.int("min_samples_leaf").max(1),
        max_features,
    };
    match spec.algorithm {
        Algorithm::DecisionTree => Estimator::Tree(Tree::fit(
            x,
            target,
            &(0..x.len()).collect::<Vec<_>>(),
            &tree_params(None),
            &mut tree_rng(seed, 0),
        )),
        Algorithm::RandomForest => {
            let width = x.first().map_or(0, Vec::len);
            let max_features = match p.text("max_features") {
                "sqrt" => Some((ceil(sqrt(width as f64)) as usize).max(1)),
                _ => None,
            };
            Estimator::Forest(Forest::fit(
                x,
                target,
                p.int("n_trees"),
                p.text("bootstrap") == "true",
                &tree_params(max_features),
                seed,
            ))
        }
        Algorithm::GradientBoostedTrees => Estimator::Boosted(Boosted::fit(
            x,
            target,
            p.int("n_estimators"),
            p.real("learning_rate"),
            p.int("max_depth"),
        )),
        Algorithm::LogisticOrLinearSgd => {
            Estimator::Linear(Linear::fit(x, target, p.int("epochs"), p.real("learning_rate"), p.real("l2")))
        }
        Algorithm::Knn => Estimator::Knn(Knn::fit(x, target, p.int("k"))),
    }
}

/// Prior class distribution, or the mean value.
fn constant_output(prepared: &Prepared) -> Vec<f64> {
    if prepared.classes.is_empty() {
        let n = prepared.y_value.len().max(1) as f64;
        vec![prepared.y_value.iter().sum::<f64>() / n]
    } else {
        let mut out = vec![0.0; prepared.classes.len()];
        let n = prepared.y_class.len().max(1) as f64;
        for &c in &prepared.y_class {
            out[c] += 1.0 / n;
        }
        out
    }
}

fn is_single_class(prepared: &Prepared) -> bool {
    !prepared.classes.is_empty() && prepared.y_class.iter().all(|c| *c == prepared.y_class[0])
}

/// Fits one estimator, falling back to a constant when the subset cannot
/// support a real fit.
fn fit_member(x: &[Vec<f64>], prepared: &Prepared, spec: &ModelSpec, hp: &Assignment, seed: u64) -> Estimator {
    if x.is_empty() || is_single_class(prepared) {
        return Estimator::Constant { output: constant_output(prepared) };
    }
    fit_estimator(x, &prepared.target(), spec, hp, seed)
}

fn fit_state(x: &[Vec<f64>], prepared: &Prepared, global: &Prepared, spec: &ModelSpec, hp: &Assignment) -> ModelState {
    match spec.clustering {
        None => ModelState::Single { estimator: fit_member(x, prepared, spec, hp, spec.seed) },
        Some(Clustering::Kmeans { k }) => {
            let k = k.min(x.len()).max(1);
            let (kmeans, assignment) = KMeans::fit(x, k, spec.seed);
            let members = (0..k)
                .map(|c| {
                    let rows: Vec<usize> = (0..x.len()).filter(|&i| assignment[i] == c).collect();
                    if rows.is_empty() {
                        return Estimator::Constant { output: constant_output(global) };
                    }
                    let sub_x: Vec<Vec<f64>> = rows.iter().map(|&i| x[i].clone()).collect();
                    fit_member(&sub_x, &prepared.subset(&rows), spec, hp, spec.seed.wrapping_add(c as u64))
                })
                .collect();
            ModelState::Clustered { kmeans, members }
        }
    }
}

/// Fits a model. Rows tagged with prefix-length buckets get one model per
/// bucket.
pub fn train(matrix: &FeatureMatrix, spec: &ModelSpec) -> Result<TrainedModel> {
    spec.validate()?;
    if matrix.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let hp = spec.resolved()?;
    let prepared = prepare_targets(matrix, spec.family, None)?;
    if spec.family == TaskFamily::Classification && prepared.classes.len() < 2 {
        return Err(Error::DegenerateTarget);
    }
    let n = matrix.len();
    if spec.algorithm == Algorithm::Knn && Params(&hp).int("k") > n {
        return Err(Error::PopulationTooSmall { k: Params(&hp).int("k"), population: n });
    }
    if let Some(Clustering::Kmeans { k }) = spec.clustering {
        if k > n {
            return Err(Error::PopulationTooSmall { k, population: n });
        }
    }

    let bucketed = matrix.row_meta.len() == n && matrix.row_meta.iter().all(|m| m.bucket.is_some());
    let state = if bucketed {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, m) in matrix.row_meta.iter().enumerate() {
            groups.entry(m.bucket.unwrap_or(0)).or_default().push(i);
        }
        let buckets = groups
            .into_iter()
            .map(|(b, rows)| {
                let sub_x: Vec<Vec<f64>> = rows.iter().map(|&i| matrix.rows[i].clone()).collect();
                (b, fit_state(&sub_x, &prepared.subset(&rows), &prepared, spec, &hp))
            })
            .collect();
        ModelState::PerLength { buckets }
    } else {
        fit_state(&matrix.rows, &prepared, &prepared, spec, &hp)
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        classes: prepared.classes,
        feature_names: matrix.feature_names.clone(),
        encoder_ref: String::new(),
        config_fingerprint: String::new(),
        training_time: 0.0,
        state,
    })
}

pub fn predict(model: &TrainedModel, matrix: &FeatureMatrix) -> Result<Prediction> {
    check_schema(&model.feature_names, &matrix.feature_names)?;
    let bucket = |i: usize| matrix.row_meta.get(i).and_then(|m| m.bucket.or(Some(m.prefix_length)));
    match model.family() {
        TaskFamily::Classification => {
            let scores: Vec<Vec<f64>> =
                matrix.rows.iter().enumerate().map(|(i, r)| model.output_row(r, bucket(i))).collect();
            let labels = scores.iter().map(|s| model.classes[argmax(s)].clone()).collect();
            Ok(Prediction::Classification { classes: model.classes.clone(), labels, scores })
        }
        TaskFamily::Regression => Ok(Prediction::Regression {
            values: matrix.rows.iter().enumerate().map(|(i, r)| model.output_row(r, bucket(i))[0]).collect(),
        }),
    }
}

/// Further training passes for gradient-descent models.
pub fn update(model: &TrainedModel, matrix: &FeatureMatrix) -> Result<TrainedModel> {
    if matrix.is_empty() {
        return Ok(model.clone());
    }
    check_schema(&model.feature_names, &matrix.feature_names)?;
    if !model.spec.algorithm.supports_update() {
        return Err(Error::UpdateUnsupported(model.spec.algorithm.name()));
    }
    let known = (model.family() == TaskFamily::Classification).then_some(model.classes.as_slice());
    let prepared = prepare_targets(matrix, model.family(), known)?;
    let epochs = Params(&model.spec.resolved()?).int("epochs");
    let mut out = model.clone();
    let all: Vec<usize> = (0..matrix.len()).collect();
    let buckets: Vec<Option<usize>> = matrix.row_meta.iter().map(|m| m.bucket).collect();
    update_state(&mut out.state, &matrix.rows, &prepared, &all, &buckets, epochs);
    Ok(out)
}

fn update_state(
    state: &mut ModelState,
    x: &[Vec<f64>],
    prepared: &Prepared,
    rows: &[usize],
    buckets: &[Option<usize>],
    epochs: usize,
) {
    let descend = |est: &mut Estimator, rows: &[usize]| {
        if let Estimator::Linear(l) = est {
            if rows.is_empty() {
                return;
            }
            let sub_x: Vec<Vec<f64>> = rows.iter().map(|&i| x[i].clone()).collect();
            let sub = prepared.subset(rows);
            l.descend(&sub_x, &sub.target(), epochs);
        }
    };
    match state {
        ModelState::Single { estimator } => descend(estimator, rows),
        ModelState::Clustered { kmeans, members } => {
            for (c, member) in members.iter_mut().enumerate() {
                let mine: Vec<usize> = rows.iter().copied().filter(|&i| kmeans.assign(&x[i]) == c).collect();
                descend(member, &mine);
            }
        }
        ModelState::PerLength { buckets: states } => {
            let routes: Vec<usize> = rows.iter().map(|&i| route_bucket(states, buckets.get(i).copied().flatten())).collect();
            for (b, (_, s)) in states.iter_mut().enumerate() {
                let mine: Vec<usize> = rows.iter().zip(&routes).filter(|(_, r)| **r == b).map(|(i, _)| *i).collect();
                update_state(s, x, prepared, &mine, buckets, epochs);
            }
        }
    }
}

/// Convenience used by explanations: boxed scalar view of a model.
pub fn scalar_fn(model: &TrainedModel, bucket: Option<usize>, class: usize) -> Box<dyn Fn(&[f64]) -> f64 + '_> {
    Box::new(move |row| model.scalar_output(row, bucket, class))
}
