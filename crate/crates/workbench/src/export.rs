//! CSV renderings of result tables and feature matrices.

use ppm_core::eval::TIMING_FIELDS;
use ppm_core::prelude::*;

use crate::store::ReportRecord;
use crate::{Error, Result};

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Storage(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Storage(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Storage(e.to_string())
}

/// One row per report; metric columns are the union over the reports in
/// canonical metric order. Undefined values are empty cells.
pub fn results_csv(records: &[ReportRecord]) -> Result<String> {
    let metrics: Vec<&str> = Metric::CLASSIFICATION
        .iter()
        .chain(Metric::REGRESSION.iter())
        .map(|m| m.name())
        .filter(|m| records.iter().any(|r| r.report.metrics.contains_key(*m)))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["job_id", "task_identity", "model_fingerprint", "family", "label", "algorithm", "encoding"];
    header.extend(["prefix", "prefix_length", "clustering"]);
    header.extend(metrics.iter().copied());
    header.extend(TIMING_FIELDS);
    header.push("row_count");
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let rep = &r.report;
        let mut row = vec![
            r.job_id.clone(),
            rep.task.identity.clone(),
            rep.model_fingerprint.clone(),
            rep.family.to_string(),
            rep.task.label.clone(),
            rep.task.algorithm.clone(),
            rep.task.encoding.clone(),
            rep.task.prefix.clone(),
            rep.task.prefix_length.to_string(),
            rep.task.clustering.clone().unwrap_or_default(),
        ];
        row.extend(metrics.iter().map(|m| rep.metrics.get(*m).map_or(String::new(), |v| cell(*v))));
        row.extend(TIMING_FIELDS.iter().map(|f| cell(rep.value(f).unwrap_or(f64::NAN))));
        row.push(rep.row_count.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Header is the feature names plus `label`; unlabeled matrices leave the
/// label column empty.
pub fn matrix_csv(m: &FeatureMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = m.feature_names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in m.rows.iter().enumerate() {
        let mut out: Vec<String> = row.iter().map(|v| cell(*v)).collect();
        out.push(m.labels.get(i).map_or(String::new(), |l| l.to_string()));
        w.write_record(&out).map_err(csv_err)?;
    }
    finish(w)
}
