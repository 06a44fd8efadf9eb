//! Cache-aware execution of one pipeline configuration:
//! load → split → prefix → label → encode → train or optimize → evaluate.

use std::sync::Arc;
use std::time::Instant;

use ppm_core::eval::Timing;
use ppm_core::hpo::TrialRecord;
use ppm_core::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{ArtifactKind, Cache};
use crate::store::Store;
use crate::xes::parse_xes;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Label,
    Train,
    Evaluate,
    Persist,
}

/// The split's trace population (after filters) and its two parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadedSplit {
    pub full: EventLog,
    pub train: EventLog,
    pub test: EventLog,
}

/// Encoded, labeled train and test matrices with the encoder that made them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledData {
    pub threshold: Option<f64>,
    pub encoder: FittedEncoder,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub model: TrainedModel,
    #[serde(default)]
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub model: Arc<ModelArtifact>,
    pub encoder_digest: String,
    pub report: EvaluationReport,
}

pub struct Pipeline<'a> {
    pub store: &'a Store,
    pub cache: &'a Cache,
}

impl Pipeline<'_> {
    pub fn loaded_split(&self, split_key: &str) -> Result<Arc<LoadedSplit>> {
        self.cache.get_or_build(ArtifactKind::LoadedLog, split_key, || {
            if !self.store.splits.contains(split_key) {
                return Err(Error::not_found("split", split_key));
            }
            let read = |path: std::path::PathBuf| -> Result<EventLog> {
                let bytes = self.store.read_object(&path)?;
                Ok(parse_xes(&bytes, "")?)
            };
            let train = read(self.store.split_object(split_key, "train"))?;
            let test = read(self.store.split_object(split_key, "test"))?;
            let mut traces: Vec<Trace> = train.traces.iter().chain(&test.traces).cloned().collect();
            traces.sort_by(|a, b| a.id.cmp(&b.id));
            Ok(LoadedSplit { full: train.derive(traces), train, test })
        })
    }

    pub fn labeled(&self, config: &PipelineConfig, split: &LoadedSplit) -> Result<Arc<LabeledData>> {
        self.cache.get_or_build(ArtifactKind::LabeledMatrix, &config.labeled_matrix_key(), || {
            let threshold = if config.label.is_binary() { Some(resolve_threshold(&split.train, &config.label)?) } else { None };
            let train_prefixes = extract_prefixes(&split.train, &config.prefix)?;
            let test_prefixes = extract_prefixes(&split.test, &config.prefix)?;
            let train = apply_labels(&train_prefixes, &split.train, &config.label, threshold)?;
            let test = apply_labels(&test_prefixes, &split.test, &config.label, threshold)?;
            let encoder = fit_encoder(&train, &config.encoding)?;
            let mut train_m = encoder.encode_instances(&train);
            let mut test_m = encoder.encode_instances(&test);
            if config.encoding.intercase {
                train_m = augment_intercase(&train_m, &split.full)?;
                test_m = augment_intercase(&test_m, &split.full)?;
            }
            Ok(LabeledData { threshold, encoder, train: train_m, test: test_m })
        })
    }

    pub fn model(&self, config: &PipelineConfig, data: &LabeledData) -> Result<Arc<ModelArtifact>> {
        self.cache.get_or_build(ArtifactKind::TrainedModel, &config.fingerprint(), || {
            let origin = Instant::now();
            let clock = || origin.elapsed().as_secs_f64();
            let (mut model, trials) = match &config.optim {
                Some(optim) => {
                    let out = optimize(&data.train, &config.model, optim, &clock)?;
                    (out.model, out.trials)
                }
                None => (train(&data.train, &config.model)?, Vec::new()),
            };
            model.training_time = clock();
            Ok(ModelArtifact { model: model.with_provenance(data.encoder.digest(), config.fingerprint()), trials })
        })
    }

    /// Runs every stage, calling `checkpoint` before each.
    pub fn run(&self, config: &PipelineConfig, checkpoint: &dyn Fn(Stage)) -> Result<Outcome> {
        let started = Instant::now();
        checkpoint(Stage::Load);
        let split = self.loaded_split(&config.split_key)?;
        checkpoint(Stage::Label);
        let data = self.labeled(config, &split)?;
        checkpoint(Stage::Train);
        let artifact = self.model(config, &data)?;
        checkpoint(Stage::Evaluate);
        if data.test.is_empty() {
            return Err(Error::invalid("the prefix strategy leaves no test instances"));
        }
        let predicted_at = Instant::now();
        let pred = predict(&artifact.model, &data.test)?;
        let prediction_time = predicted_at.elapsed().as_secs_f64();
        let lengths: Vec<usize> = data.test.row_meta.iter().map(|m| m.prefix_length).collect();
        let timing = Timing {
            training_time: artifact.model.training_time,
            prediction_time,
            elapsed_total: started.elapsed().as_secs_f64(),
        };
        let report =
            EvaluationReport::build(&config.fingerprint(), config.descriptor(), &data.test.labels, &lengths, &pred, timing)?;
        checkpoint(Stage::Persist);
        Ok(Outcome { encoder_digest: data.encoder.digest(), model: artifact, report })
    }
}
