//! Pipeline configurations and the training-request expansion.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::{digest_of, digest_parts};
use crate::encode::{EncodingMethod, EncodingSpec};
use crate::eval::TaskDescriptor;
use crate::hpo::OptimSpec;
use crate::label::{LabelKind, LabelSpec};
use crate::learn::{Algorithm, Assignment, Clustering, ModelSpec, TaskFamily};
use crate::split::PrefixSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMethod {
    Outcome,
    Numeric,
    NextActivity,
}

impl PredictionMethod {
    pub fn family(self) -> TaskFamily {
        match self {
            PredictionMethod::Numeric => TaskFamily::Regression,
            _ => TaskFamily::Classification,
        }
    }

    pub fn accepts(self, kind: &LabelKind) -> bool {
        match self {
            PredictionMethod::NextActivity => matches!(kind, LabelKind::NextActivity),
            PredictionMethod::Outcome => {
                kind.family() == TaskFamily::Classification && !matches!(kind, LabelKind::NextActivity)
            }
            PredictionMethod::Numeric => kind.family() == TaskFamily::Regression,
        }
    }
}

/// Everything one job needs, from split to model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub split_key: String,
    pub prediction_method: PredictionMethod,
    pub prefix: PrefixSpec,
    pub label: LabelSpec,
    pub encoding: EncodingSpec,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimSpec>,
}

impl PipelineConfig {
    /// Checks that does not need the store: shape and compatibility.
    pub fn validate(&self) -> Result<()> {
        self.prefix.validate()?;
        self.label.validate()?;
        self.encoding.validate()?;
        self.model.validate()?;
        if !self.prediction_method.accepts(&self.label.kind) {
            return Err(Error::validation(format!(
                "label `{}` is incompatible with prediction method {:?}",
                self.label.kind.name(),
                self.prediction_method
            )));
        }
        if self.model.family != self.label.task {
            return Err(Error::validation(format!(
                "model family {} does not match the {} label",
                self.model.family, self.label.task
            )));
        }
        if self.model.clustering.is_some() && self.model.family != TaskFamily::Classification {
            return Err(Error::validation("clustering is only available for classification"));
        }
        if let Some(o) = &self.optim {
            o.validate(&self.model)?;
        }
        Ok(())
    }

    /// Identifies the full configuration; also the model's key.
    pub fn fingerprint(&self) -> String {
        digest_of(&(&self.split_key, &self.label, &self.encoding, &self.model, &self.prefix, &self.optim))
    }

    /// Key of the labeled, encoded train/test matrices.
    pub fn labeled_matrix_key(&self) -> String {
        digest_parts(
            "labeled_matrix",
            &[&self.split_key, &digest_of(&self.prefix), &digest_of(&self.label), &digest_of(&self.encoding)],
        )
    }

    pub fn algorithm_label(&self) -> String {
        match self.model.clustering {
            Some(Clustering::Kmeans { k }) => format!("{}+kmeans({k})", self.model.algorithm.name()),
            None => self.model.algorithm.name().into(),
        }
    }

    pub fn encoding_label(&self) -> String {
        let mut s = String::from(self.encoding.method.name());
        if self.encoding.intercase {
            s.push_str("+intercase");
        }
        s
    }

    /// Human-readable name of the configuration.
    pub fn task_identity(&self) -> String {
        let mut s = format!(
            "{} | {} | {} | {}",
            self.label.kind.name(),
            self.algorithm_label(),
            self.encoding_label(),
            self.prefix.label()
        );
        if let Some(o) = &self.optim {
            s.push_str(&format!(" | {:?}", o.method).to_lowercase());
        }
        s
    }

    pub fn descriptor(&self) -> TaskDescriptor {
        TaskDescriptor {
            identity: self.task_identity(),
            algorithm: self.model.algorithm.name().into(),
            encoding: self.encoding_label(),
            prefix: self.prefix.label(),
            prefix_length: self.prefix.n,
            label: self.label.kind.name(),
            clustering: self.model.clustering.map(|Clustering::Kmeans { k }| format!("kmeans({k})")),
        }
    }
}

/// A batch of jobs sharing label, optimization and split, over the product
/// of algorithms, encodings and prefix strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRequest {
    pub split_key: String,
    pub prediction_method: PredictionMethod,
    pub algorithms: Vec<Algorithm>,
    pub encodings: Vec<EncodingMethod>,
    pub prefix_specs: Vec<PrefixSpec>,
    pub label: LabelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<Clustering>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimSpec>,
    /// Per-algorithm hyperparameter overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hyperparameters: BTreeMap<Algorithm, Assignment>,
    #[serde(default)]
    pub intercase: bool,
    #[serde(default)]
    pub seed: u64,
}

fn sorted_unique<T: Ord + Clone>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    out.sort();
    out.dedup();
    out
}

/// One config per (algorithm, encoding, prefix) in lexicographic order.
pub fn expand_training_request(req: &TrainingRequest) -> Result<Vec<PipelineConfig>> {
    for (axis, empty) in [
        ("algorithms", req.algorithms.is_empty()),
        ("encodings", req.encodings.is_empty()),
        ("prefix_specs", req.prefix_specs.is_empty()),
    ] {
        if empty {
            return Err(Error::validation(format!("`{axis}` must not be empty")));
        }
    }
    let family = req.label.task;
    let mut out = Vec::new();
    for alg in sorted_unique(&req.algorithms) {
        for enc in sorted_unique(&req.encodings) {
            for prefix in sorted_unique(&req.prefix_specs) {
                let mut encoding = EncodingSpec::new(enc, prefix.n);
                encoding.intercase = req.intercase;
                let model = ModelSpec {
                    family,
                    algorithm: alg,
                    clustering: req.clustering,
                    hyperparameters: req.hyperparameters.get(&alg).cloned().unwrap_or_default(),
                    seed: req.seed,
                };
                let config = PipelineConfig {
                    split_key: req.split_key.clone(),
                    prediction_method: req.prediction_method,
                    prefix,
                    label: req.label.clone(),
                    encoding,
                    model,
                    optim: req.optim.clone(),
                };
                config.validate()?;
                out.push(config);
            }
        }
    }
    Ok(out)
}
