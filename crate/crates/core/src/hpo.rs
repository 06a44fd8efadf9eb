//! Hyperparameter search against a holdout carved from the training rows.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::FeatureMatrix;
use crate::eval::{evaluate, Metric};
use crate::learn::{predict, train, Assignment, HpValue, HyperparameterSpace, ModelSpec, TrainedModel};
use crate::split::head_count;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimMethod {
    None,
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    pub method: OptimMethod,
    /// Trial count for random search; grid always runs the full product.
    pub budget: usize,
    pub metric: Metric,
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Search space; the algorithm's default finite space when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<HyperparameterSpace>,
}

impl OptimSpec {
    pub fn new(method: OptimMethod, metric: Metric) -> Self {
        OptimSpec { method, budget: 1, metric, validation_fraction: 0.2, seed: 0, space: None }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_space(mut self, space: HyperparameterSpace) -> Self {
        self.space = Some(space);
        self
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::validation("optimization budget must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::validation("validation_fraction must lie in (0, 1)"));
        }
        if self.metric.family() != model.family {
            return Err(Error::validation(format!(
                "metric `{}` is a {} metric but the task is {}",
                self.metric.name(),
                self.metric.family(),
                model.family
            )));
        }
        let declared = model.algorithm.space();
        for (name, domain) in self.search_space(model).iter() {
            domain.validate(name)?;
            if declared.get(name).is_none() {
                return Err(Error::validation(format!("{} has no hyperparameter `{name}`", model.algorithm.name())));
            }
        }
        Ok(())
    }

    pub fn search_space(&self, model: &ModelSpec) -> HyperparameterSpace {
        self.space.clone().unwrap_or_else(|| model.algorithm.default_search_space())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub ordinal: usize,
    pub assignment: Assignment,
    /// Validation metric oriented so larger is better (error metrics negated).
    pub validation_score: f64,
    pub training_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub model: TrainedModel,
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Splits row indices by trace, keeping matrix order: leading traces train,
/// trailing traces validate.
pub fn holdout_rows(matrix: &FeatureMatrix, validation_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut traces: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for m in &matrix.row_meta {
        if seen.insert(m.trace_id.as_str()) {
            traces.push(m.trace_id.as_str());
        }
    }
    let (train_rows, val_rows): (Vec<usize>, Vec<usize>) = if traces.is_empty() {
        // no trace metadata: cut rows directly
        let cut = head_count(matrix.len(), 1.0 - validation_fraction);
        ((0..cut).collect(), (cut..matrix.len()).collect())
    } else {
        let cut = head_count(traces.len(), 1.0 - validation_fraction);
        let head: BTreeSet<&str> = traces[..cut].iter().copied().collect();
        (0..matrix.len()).partition(|&i| head.contains(matrix.row_meta[i].trace_id.as_str()))
    };
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::DegenerateSplit { train: train_rows.len(), test: val_rows.len() });
    }
    Ok((train_rows, val_rows))
}

/// Full grid in lexicographic order: names ascending, first name slowest.
pub fn grid(space: &HyperparameterSpace) -> Result<Vec<Assignment>> {
    let mut axes: Vec<(&String, Vec<HpValue>)> = Vec::new();
    for (name, domain) in space.iter() {
        let values = domain.enumerate().ok_or_else(|| Error::GridRequiresFiniteDomains(name.clone()))?;
        axes.push((name, values));
    }
    let mut out = vec![Assignment::new()];
    for (name, values) in axes {
        out = out
            .into_iter()
            .flat_map(|a| {
                values.iter().map(move |v| {
                    let mut next = a.clone();
                    next.insert(name.clone(), v.clone());
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

/// `count` independent draws, each sampling every domain in name order.
pub fn random_draws(space: &HyperparameterSpace, count: usize, seed: u64) -> Vec<Assignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| space.iter().map(|(name, d)| (name.clone(), d.sample(&mut rng))).collect()).collect()
}

/// Runs the search, picks the best trial (earliest ordinal on ties) and
/// refits it on every row. `clock` returns seconds from any fixed origin.
pub fn optimize(matrix: &FeatureMatrix, spec: &ModelSpec, optim: &OptimSpec, clock: &dyn Fn() -> f64) -> Result<OptimOutcome> {
    optim.validate(spec)?;
    let candidates: Vec<Assignment> = match optim.method {
        OptimMethod::None => vec![Assignment::new()],
        OptimMethod::Grid => grid(&optim.search_space(spec))?,
        OptimMethod::Random => random_draws(&optim.search_space(spec), optim.budget, optim.seed),
    };
    let (train_rows, val_rows) = holdout_rows(matrix, optim.validation_fraction)?;
    let fit_part = matrix.select(&train_rows);
    let val_part = matrix.select(&val_rows);

    let mut trials = Vec::with_capacity(candidates.len());
    for (ordinal, overrides) in candidates.into_iter().enumerate() {
        let mut trial_spec = spec.clone();
        trial_spec.hyperparameters.extend(overrides);
        let assignment = trial_spec.resolved()?;
        let started = clock();
        let model = train(&fit_part, &trial_spec)?;
        let training_time = clock() - started;
        let metrics = evaluate(&val_part.labels, &predict(&model, &val_part)?)?;
        let raw = metrics.get(optim.metric.name()).copied().unwrap_or(f64::NAN);
        trials.push(TrialRecord { ordinal, assignment, validation_score: optim.metric.oriented(raw), training_time });
    }
    let best = trials
        .iter()
        .fold(None::<&TrialRecord>, |acc, t| match acc {
            Some(b) if b.validation_score >= t.validation_score => Some(b),
            _ => Some(t),
        })
        .cloned()
        .ok_or(Error::EmptyTrainingSet)?;
    let mut final_spec = spec.clone();
    final_spec.hyperparameters = best.assignment.clone();
    let model = train(matrix, &final_spec)?;
    Ok(OptimOutcome { model, best, trials })
}
