mod common;

use std::sync::Arc;

use common::*;
use ppm_core::prelude::*;
use ppm_workbench::orchestrator::{HookAction, JobFilter, JobStatus, Transition};
use ppm_workbench::pipeline::Stage;
use ppm_workbench::store::Store;
use ppm_workbench::Error;
use tempfile::TempDir;

fn statuses(j: &ppm_workbench::orchestrator::JobRecord) -> Vec<JobStatus> {
    j.transitions.iter().map(|t| t.status).collect()
}

#[test]
fn batch_completes_with_full_history() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 2);
    let (_, split) = seed_split(&svc, 120, 1);
    let jobs = svc.submit(&batch_of_eight(&split.spec.split_key)).unwrap();
    assert_eq!(jobs.len(), 8);
    assert!(jobs.iter().all(|j| j.status == JobStatus::Queued));
    svc.start_workers();
    assert!(svc.wait_idle(LONG));
    let executions = svc.orchestrator().executions();
    for j in &jobs {
        let j = svc.job(&j.id).unwrap();
        assert_eq!(j.status, JobStatus::Completed, "{:?}", j.error_detail);
        assert_eq!(statuses(&j), [JobStatus::Created, JobStatus::Queued, JobStatus::Running, JobStatus::Completed]);
        let r = j.result.as_ref().unwrap();
        assert_eq!(r.report_id, j.id);
        assert!(svc.store().models.contains(&r.model_fingerprint));
        assert_eq!(executions[&j.id], 1);
    }
    let done = svc.jobs(&JobFilter { status: Some(JobStatus::Completed), ..Default::default() });
    assert_eq!(done.len(), 8);
    // newest first
    assert!(done.windows(2).all(|w| w[0].seq > w[1].seq));
    let trees = svc.jobs(&JobFilter { algorithm: Some("decision_tree".into()), ..Default::default() });
    assert_eq!(trees.len(), 4);
    assert!(svc.store().dangling_references().is_empty());
    svc.shutdown();
}

#[test]
fn runtime_failures_are_recorded_not_retried() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 2);
    let (_, split) = seed_split(&svc, 80, 2);
    let jobs = svc.submit(&doomed(&split.spec.split_key, &[Algorithm::DecisionTree], &[EncodingMethod::Boolean])).unwrap();
    svc.start_workers();
    assert!(svc.wait_idle(LONG));
    let j = svc.job(&jobs[0].id).unwrap();
    assert_eq!(j.status, JobStatus::Error);
    assert_eq!(j.error_detail.as_ref().unwrap().code, "missing_label_attribute");
    assert!(j.result.is_none());
    assert_eq!(svc.orchestrator().executions()[&j.id], 1);
    assert!(svc.store().reports.is_empty());
    svc.shutdown();
}

#[test]
fn submission_is_all_or_nothing() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 1);
    let (_, split) = seed_split(&svc, 60, 3);
    let missing = request("nope", &[Algorithm::Knn], &[EncodingMethod::Boolean], &[PrefixSpec::fixed(2, ShortTracePolicy::Discard)], duration_label());
    assert!(matches!(svc.submit(&missing), Err(Error::NotFound { kind: "split", .. })));
    let unknown_attr = request(
        &split.spec.split_key,
        &[Algorithm::Knn],
        &[EncodingMethod::Boolean],
        &[PrefixSpec::fixed(2, ShortTracePolicy::Discard)],
        LabelSpec::of(LabelKind::CategoricalAttribute { name: "colour".into() }),
    );
    let err = svc.submit(&unknown_attr).unwrap_err();
    assert_eq!(err.code(), "validation_error");
    let mut empty_axis = batch_of_eight(&split.spec.split_key);
    empty_axis.encodings.clear();
    assert_eq!(svc.submit(&empty_axis).unwrap_err().code(), "validation_error");
    assert!(svc.store().jobs.is_empty());
}

#[test]
fn restart_requeues_queued_and_closes_running() {
    let dir = TempDir::new().unwrap();
    let (ids, split_key) = {
        let svc = service(&dir, 1);
        let (_, split) = seed_split(&svc, 60, 4);
        let jobs = svc
            .submit(&request(
                &split.spec.split_key,
                &[Algorithm::DecisionTree],
                &[EncodingMethod::Boolean, EncodingMethod::SimpleIndex, EncodingMethod::ComplexIndex],
                &[PrefixSpec::fixed(2, ShortTracePolicy::Discard)],
                duration_label(),
            ))
            .unwrap();
        // simulate a crash while the first job was being worked on
        svc.store()
            .jobs
            .update(&jobs[0].id, |j| {
                j.status = JobStatus::Running;
                j.transitions.push(Transition { status: JobStatus::Running, at: "then".into() });
                Ok(())
            })
            .unwrap();
        (jobs.iter().map(|j| j.id.clone()).collect::<Vec<_>>(), split.spec.split_key)
    };
    let svc = service(&dir, 2);
    let first = svc.job(&ids[0]).unwrap();
    assert_eq!(first.status, JobStatus::Error);
    assert_eq!(first.error_detail.unwrap().code, "interrupted");
    assert_eq!(svc.pool_status().queued, 2);
    svc.start_workers();
    assert!(svc.wait_idle(LONG));
    for id in &ids[1..] {
        assert_eq!(svc.job(id).unwrap().status, JobStatus::Completed);
    }
    // sequence numbers keep increasing across restarts
    let more = svc.submit(&batch_of_eight(&split_key)).unwrap();
    assert!(more[0].seq > 3);
    svc.shutdown();
}

#[test]
fn killed_worker_is_replaced_and_others_unaffected() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 2);
    let (_, split) = seed_split(&svc, 100, 5);
    let jobs = svc.submit(&batch_of_eight(&split.spec.split_key)).unwrap();
    let victim = jobs[3].id.clone();
    let target = victim.clone();
    svc.orchestrator().set_hook(Some(Arc::new(move |id: &str, stage: Stage| {
        if id == target && stage == Stage::Train {
            HookAction::Kill
        } else {
            HookAction::Continue
        }
    })));
    svc.start_workers();
    assert!(svc.wait_idle(LONG));
    // the supervisor notices within a few polls
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    while svc.job(&victim).unwrap().status == JobStatus::Running && std::time::Instant::now() < deadline {
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    let v = svc.job(&victim).unwrap();
    assert_eq!(v.status, JobStatus::Error);
    assert_eq!(v.error_detail.unwrap().code, "worker_lost");
    for j in jobs.iter().filter(|j| j.id != victim) {
        assert_eq!(svc.job(&j.id).unwrap().status, JobStatus::Completed);
    }
    let pool = svc.pool_status();
    assert!(pool.respawns >= 1);
    assert_eq!(pool.alive, 2);
    assert!(svc.orchestrator().executions().values().all(|n| *n == 1));
    assert!(svc.store().dangling_references().is_empty());
    svc.shutdown();
}

#[test]
fn panicking_pipeline_becomes_an_error_record() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 1);
    let (_, split) = seed_split(&svc, 60, 6);
    svc.orchestrator().set_hook(Some(Arc::new(|_: &str, stage: Stage| {
        if stage == Stage::Evaluate {
            HookAction::Panic("boom".into())
        } else {
            HookAction::Continue
        }
    })));
    let jobs = svc
        .submit(&request(
            &split.spec.split_key,
            &[Algorithm::DecisionTree],
            &[EncodingMethod::Boolean],
            &[PrefixSpec::fixed(2, ShortTracePolicy::Discard)],
            duration_label(),
        ))
        .unwrap();
    svc.start_workers();
    assert!(svc.wait_idle(LONG));
    let j = svc.job(&jobs[0].id).unwrap();
    assert_eq!(j.status, JobStatus::Error);
    let e = j.error_detail.unwrap();
    assert_eq!(e.code, "internal_error");
    assert!(e.message.contains("boom"));
    // the same worker keeps serving
    assert_eq!(svc.pool_status().alive, 1);
    assert_eq!(svc.pool_status().respawns, 0);
    svc.shutdown();
}

#[test]
fn records_survive_reopening_the_store() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 2);
    let (_, split) = seed_split(&svc, 80, 7);
    svc.submit(&batch_of_eight(&split.spec.split_key)).unwrap();
    svc.start_workers();
    assert!(svc.wait_idle(LONG));
    svc.shutdown();
    let reopened = Store::open(dir.path().join("store")).unwrap();
    assert_eq!(reopened.jobs.list(), svc.store().jobs.list());
    assert_eq!(reopened.reports.list(), svc.store().reports.list());
    assert_eq!(reopened.models.list(), svc.store().models.list());
    assert!(reopened.dangling_references().is_empty());
}
