#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use ppm_core::prelude::*;
use ppm_workbench::service::{Service, SplitRequest};
use ppm_workbench::settings::Settings;
use ppm_workbench::store::{LogRecord, SplitRecord};
use ppm_workbench::synth::{planted_log, SynthSpec};
use ppm_workbench::xes::serialize_xes;
use tempfile::TempDir;

pub const LONG: Duration = Duration::from_secs(300);

pub fn service(dir: &TempDir, workers: usize) -> Arc<Service> {
    let settings = Settings { workers, ..Settings::rooted(dir.path()) };
    Service::open(settings).unwrap()
}

/// Uploads a planted log and splits it 80/20 by start time.
pub fn seed_split(svc: &Service, traces: usize, seed: u64) -> (LogRecord, SplitRecord) {
    let bytes = serialize_xes(&planted_log(&SynthSpec::new(traces, seed)));
    let log = svc.upload_log(&bytes, Some("planted")).unwrap();
    let split = svc
        .create_split(&SplitRequest {
            log_id: log.id.clone(),
            name: "main".into(),
            train_fraction: 0.8,
            ordering: TraceOrdering::TemporalStart,
            filters: vec![],
        })
        .unwrap();
    (log, split)
}

pub fn duration_label() -> LabelSpec {
    LabelSpec::of(LabelKind::DurationBinary { threshold: ThresholdMode::LogMean })
}

pub fn request(
    split_key: &str,
    algorithms: &[Algorithm],
    encodings: &[EncodingMethod],
    prefixes: &[PrefixSpec],
    label: LabelSpec,
) -> TrainingRequest {
    TrainingRequest {
        split_key: split_key.to_string(),
        prediction_method: PredictionMethod::Outcome,
        algorithms: algorithms.to_vec(),
        encodings: encodings.to_vec(),
        prefix_specs: prefixes.to_vec(),
        label,
        clustering: None,
        optim: None,
        hyperparameters: Default::default(),
        intercase: false,
        seed: 0,
    }
}

/// Two algorithms, two encodings, prefix lengths 2 and 4.
pub fn batch_of_eight(split_key: &str) -> TrainingRequest {
    request(
        split_key,
        &[Algorithm::DecisionTree, Algorithm::RandomForest],
        &[EncodingMethod::Boolean, EncodingMethod::SimpleIndex],
        &[PrefixSpec::fixed(2, ShortTracePolicy::Discard), PrefixSpec::fixed(4, ShortTracePolicy::Discard)],
        duration_label(),
    )
}

/// Labels on a trace attribute that only about half the cases carry, so
/// every job passes submission checks and fails while labeling.
pub fn doomed(split_key: &str, algorithms: &[Algorithm], encodings: &[EncodingMethod]) -> TrainingRequest {
    request(
        split_key,
        algorithms,
        encodings,
        &[PrefixSpec::fixed(3, ShortTracePolicy::Discard)],
        LabelSpec::of(LabelKind::CategoricalAttribute { name: "survey".into() }),
    )
}

/// Serves the API on an ephemeral port; returns the base URL.
pub fn spawn_server(svc: Arc<Service>) -> (String, tokio::sync::oneshot::Sender<()>, std::thread::JoinHandle<()>) {
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let handle = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            addr_tx.send(listener.local_addr().unwrap()).unwrap();
            ppm_workbench::http::serve(svc, listener, async {
                let _ = stop_rx.await;
            })
            .await
            .unwrap();
        });
    });
    let addr = addr_rx.recv().unwrap();
    (format!("http://{addr}"), stop_tx, handle)
}
