//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.
//!
//! `PPM_LOAD_SECS` shortens the sustained-load window for local runs; the
//! criterion itself is only met at 60 s or more.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use ppm_core::eval::{auc, ComparisonView, TIMING_FIELDS};
use ppm_core::learn::{scalar_fn, Estimator, ModelState};
use ppm_core::prelude::*;
use ppm_core::split::Slot;
use ppm_workbench::cache::{ArtifactKind, Cache};
use ppm_workbench::orchestrator::{HookAction, JobFilter, JobRecord, JobStatus};
use ppm_workbench::pipeline::{Pipeline, Stage};
use ppm_workbench::store::Store;
use ppm_workbench::synth::{planted_log, SynthSpec};
use ppm_workbench::xes::serialize_xes;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------------------
// encoding oracle

fn activity_pool() -> [&'static str; 6] {
    ["A", "B", "C", "D", "E", "F"]
}

/// Random log with every attribute shape the complex encoding handles.
fn varied_log(rng: &mut ChaCha8Rng, traces: usize, extra_activity: bool) -> EventLog {
    let mut out = Vec::new();
    for i in 0..traces {
        let mut t = rng.random_range(0..100_000i64);
        let len = rng.random_range(1..=7);
        let mut events = Vec::new();
        for _ in 0..len {
            t += rng.random_range(60..7200);
            let act = if extra_activity && rng.random_bool(0.2) { "Z" } else { activity_pool()[rng.random_range(0..6)] };
            let mut e = Event::new(act, Timestamp::from_secs(t));
            if rng.random_bool(0.7) {
                e = e.with_resource(["r1", "r2", "r3", "r4"][rng.random_range(0..if extra_activity { 4 } else { 3 })]);
            }
            if rng.random_bool(0.8) {
                e = e.with_attr("cost", AttributeValue::Integer(rng.random_range(-50..500)));
            }
            if rng.random_bool(0.6) {
                e = e.with_attr("tier", AttributeValue::String(["gold", "silver", "bronze"][rng.random_range(0..3)].into()));
            }
            if rng.random_bool(0.5) {
                let v = if rng.random_bool(0.5) {
                    AttributeValue::Integer(rng.random_range(0..3))
                } else {
                    AttributeValue::String("n/a".into())
                };
                e = e.with_attr("mixed", v);
            }
            if rng.random_bool(0.4) {
                e = e.with_attr("flag", AttributeValue::Boolean(rng.random_bool(0.5)));
            }
            if rng.random_bool(0.3) {
                e = e.with_attr("when", AttributeValue::Timestamp(Timestamp::from_secs(t - 30)));
            }
            events.push(e);
        }
        let mut tr = Trace::new(format!("t{i:03}"), events);
        tr = tr.with_attr("region", AttributeValue::String(["north", "south", "east"][rng.random_range(0..3)].into()));
        if rng.random_bool(0.7) {
            tr = tr.with_attr("age", AttributeValue::Real(rng.random_range(18.0..90.0)));
        }
        tr = tr.with_attr("vip", AttributeValue::Boolean(rng.random_bool(0.3)));
        out.push(tr);
    }
    EventLog::new("varied", out).unwrap()
}

fn render(v: &AttributeValue) -> Option<String> {
    match v {
        AttributeValue::String(s) => Some(s.clone()),
        AttributeValue::Integer(i) => Some(i.to_string()),
        AttributeValue::Real(r) => Some(format!("{r}")),
        AttributeValue::Boolean(b) => Some(if *b { "true".into() } else { "false".into() }),
        AttributeValue::Timestamp(_) => None,
    }
}

fn number(v: &AttributeValue) -> Option<f64> {
    match v {
        AttributeValue::Integer(i) => Some(*i as f64),
        AttributeValue::Real(r) => Some(*r),
        _ => None,
    }
}

/// Name, whether every value seen was a number, levels in first-seen order.
struct OracleAttr {
    name: String,
    numeric: bool,
    levels: Vec<String>,
}

fn learn_attrs<'a>(pairs: impl Iterator<Item = (String, &'a AttributeValue)>) -> Vec<OracleAttr> {
    let mut out: Vec<OracleAttr> = Vec::new();
    for (name, v) in pairs {
        let Some(text) = render(v) else { continue };
        let idx = match out.iter().position(|a| a.name == name) {
            Some(i) => i,
            None => {
                out.push(OracleAttr { name, numeric: true, levels: vec![] });
                out.len() - 1
            }
        };
        let a = &mut out[idx];
        a.numeric &= number(v).is_some();
        if !a.levels.contains(&text) {
            a.levels.push(text);
        }
    }
    out
}

fn event_pairs(e: &Event) -> Vec<(String, AttributeValue)> {
    let mut v = Vec::new();
    if let Some(r) = &e.resource {
        v.push(("org:resource".to_string(), AttributeValue::String(r.clone())));
    }
    for (k, x) in &e.payload {
        v.push((k.clone(), x.clone()));
    }
    v
}

fn lookup(pairs: &[(String, AttributeValue)], name: &str) -> Option<AttributeValue> {
    pairs.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone())
}

fn cells(out: &mut Vec<f64>, attr: &OracleAttr, value: Option<&AttributeValue>, flag: bool) {
    if attr.numeric {
        let x = value.and_then(number);
        out.push(x.unwrap_or(0.0));
        if flag {
            out.push(if x.is_some() { 1.0 } else { 0.0 });
        }
    } else {
        let text = value.and_then(render);
        for l in &attr.levels {
            out.push(if text.as_ref() == Some(l) { 1.0 } else { 0.0 });
        }
    }
}

/// Brute-force encoder written from the layout rules alone.
fn oracle_encode(
    train: &[LabeledInstance],
    target: &[LabeledInstance],
    method: EncodingMethod,
    len: usize,
) -> (Vec<String>, Vec<Vec<f64>>) {
    let real = |li: &LabeledInstance| -> Vec<Event> {
        li.instance.slots.iter().filter_map(|s| if let Slot::Event(e) = s { Some(e.clone()) } else { None }).collect()
    };
    let mut vocab: Vec<String> = Vec::new();
    for li in train {
        for e in real(li) {
            if !vocab.contains(&e.activity) {
                vocab.push(e.activity.clone());
            }
        }
    }
    let complex = method == EncodingMethod::ComplexIndex;
    let all_event_pairs: Vec<(String, AttributeValue)> =
        train.iter().flat_map(|li| real(li).into_iter().flat_map(|e| event_pairs(&e))).collect();
    let ev_attrs = if complex { learn_attrs(all_event_pairs.iter().map(|(k, v)| (k.clone(), v))) } else { vec![] };
    let tr_pairs: Vec<(String, AttributeValue)> =
        train.iter().flat_map(|li| li.instance.trace_attrs.iter().map(|(k, v)| (k.clone(), v.clone()))).collect();
    let tr_attrs = if complex { learn_attrs(tr_pairs.iter().map(|(k, v)| (k.clone(), v))) } else { vec![] };

    let mut names = Vec::new();
    if method == EncodingMethod::Boolean {
        names = vocab.clone();
    } else {
        for p in 1..=len {
            names.push(format!("pos_{p}"));
        }
    }
    if complex {
        for p in 1..=len {
            for a in &ev_attrs {
                if a.numeric {
                    names.push(format!("pos_{p}:{}", a.name));
                    names.push(format!("pos_{p}:{}?present", a.name));
                } else {
                    for l in &a.levels {
                        names.push(format!("pos_{p}:{}={l}", a.name));
                    }
                }
            }
        }
        for a in &tr_attrs {
            if a.numeric {
                names.push(format!("trace:{}", a.name));
            } else {
                for l in &a.levels {
                    names.push(format!("trace:{}={l}", a.name));
                }
            }
        }
    }

    let rows = target
        .iter()
        .map(|li| {
            let mut row = Vec::new();
            if method == EncodingMethod::Boolean {
                let acts: Vec<String> = real(li).into_iter().map(|e| e.activity).collect();
                for a in &vocab {
                    row.push(if acts.contains(a) { 1.0 } else { 0.0 });
                }
            } else {
                for p in 0..len {
                    row.push(match li.instance.slots.get(p) {
                        Some(Slot::Event(e)) => match vocab.iter().position(|a| *a == e.activity) {
                            Some(i) => (i + 1) as f64,
                            None => (vocab.len() + 1) as f64,
                        },
                        _ => 0.0,
                    });
                }
            }
            if complex {
                for p in 0..len {
                    let pairs = match li.instance.slots.get(p) {
                        Some(Slot::Event(e)) => event_pairs(e),
                        _ => vec![],
                    };
                    for a in &ev_attrs {
                        cells(&mut row, a, lookup(&pairs, &a.name).as_ref(), true);
                    }
                }
                for a in &tr_attrs {
                    cells(&mut row, a, li.instance.trace_attrs.get(&a.name), false);
                }
            }
            row
        })
        .collect();
    (names, rows)
}

fn encoding_oracle() -> Verdict {
    let started = Instant::now();
    let label = LabelSpec::of(LabelKind::DurationBinary { threshold: ThresholdMode::LogMean });
    let mut compared = [0usize; 3];
    let methods = [EncodingMethod::Boolean, EncodingMethod::SimpleIndex, EncodingMethod::ComplexIndex];
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train_log = varied_log(&mut rng, 14, false);
        // test traces bring an unseen activity, resource and levels
        let test_log = varied_log(&mut rng, 8, true);
        let n = rng.random_range(1..=6);
        let policy = if seed % 2 == 0 { ShortTracePolicy::ZeroPad } else { ShortTracePolicy::Discard };
        let prefix = PrefixSpec::up_to(n, policy);
        let th = resolve_threshold(&train_log, &label).map_err(|e| e.to_string())?;
        let lab = |log: &EventLog| -> Result<Vec<LabeledInstance>, String> {
            let p = extract_prefixes(log, &prefix).map_err(|e| e.to_string())?;
            apply_labels(&p, log, &label, Some(th)).map_err(|e| e.to_string())
        };
        let (train_i, test_i) = (lab(&train_log)?, lab(&test_log)?);
        for (m, method) in methods.iter().enumerate() {
            let padded = rng.random_range(1..=7);
            let enc = fit_encoder(&train_i, &EncodingSpec::new(*method, padded)).map_err(|e| e.to_string())?;
            for part in [&train_i, &test_i] {
                let got = enc.encode_instances(part);
                let (names, rows) = oracle_encode(&train_i, part, *method, padded);
                ensure(got.feature_names == names, || format!("{method:?} seed {seed}: feature names differ"))?;
                ensure(got.rows.len() == rows.len(), || format!("{method:?} seed {seed}: row counts differ"))?;
                for (i, (a, b)) in got.rows.iter().zip(&rows).enumerate() {
                    let same = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
                    ensure(same, || format!("{method:?} seed {seed}: row {i} differs"))?;
                }
                ensure(got.labels.iter().zip(part).all(|(l, li)| *l == li.label), || "labels not carried".into())?;
                compared[m] += part.len();
            }
        }
    }
    ensure(compared.iter().all(|c| *c >= 50), || format!("too few instances: {compared:?}"))?;
    within(started.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "boolean/simple/complex matched on {}/{}/{} instances, exact",
        compared[0], compared[1], compared[2]
    ))
}

// ---------------------------------------------------------------------------
// metrics

fn pair_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if truth[i] && !truth[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    if pairs == 0.0 {
        0.5
    } else {
        wins / pairs
    }
}

fn binary_prediction(truth: &[bool], scores: &[f64]) -> (Vec<Label>, Prediction) {
    let name = |b: bool| if b { "true" } else { "false" }.to_string();
    (
        truth.iter().map(|t| Label::Class(name(*t))).collect(),
        Prediction::Classification {
            classes: vec!["false".into(), "true".into()],
            labels: scores.iter().map(|s| name(*s >= 0.5)).collect(),
            scores: scores.iter().map(|s| vec![1.0 - s, *s]).collect(),
        },
    )
}

fn metric_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(1..=200);
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let coarse = case % 2 == 0;
        let scores: Vec<f64> =
            (0..n).map(|_| if coarse { rng.random_range(0..10) as f64 / 9.0 } else { rng.random_range(0.0..1.0) }).collect();
        let (labels, pred) = binary_prediction(&truth, &scores);
        let m = evaluate_classification(&labels, &pred).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for (t, s) in truth.iter().zip(&scores) {
            match (*t, *s >= 0.5) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let expected =
            [("auc", pair_auc(&scores, &truth)), ("precision", p), ("recall", r), ("f1", f1), ("accuracy", (tp + tn) / n as f64)];
        for (name, want) in expected {
            let got = m[name];
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-9, || format!("case {case}: {name} {got} vs {want}"))?;
        }
    }
    // worked examples
    let mut truth = vec![true, true, false, true];
    let mut scores = vec![0.9, 0.8, 0.7, 0.2];
    truth.extend([false; 6]);
    scores.extend([0.1; 6]);
    let (labels, pred) = binary_prediction(&truth, &scores);
    let m = evaluate_classification(&labels, &pred).map_err(|e| e.to_string())?;
    for name in ["precision", "recall", "f1"] {
        ensure((m[name] - 2.0 / 3.0).abs() < 1e-12, || format!("worked example {name} = {}", m[name]))?;
    }
    let four = auc(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]);
    ensure((four - 0.75).abs() < 1e-12, || format!("four-point AUC = {four}"))?;
    Ok(format!("100 random sets, max deviation {worst:.1e}; worked examples 2/3 and 0.75 hold"))
}

// ---------------------------------------------------------------------------
// shapley

fn names(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("x{i}")).collect()
}

fn fixture_matrix(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> FeatureMatrix {
    let width = rows[0].len();
    let row_meta = (0..rows.len())
        .map(|i| ppm_core::encode::RowMeta { trace_id: format!("r{i}"), prefix_length: 1, bucket: None, prefix_end: None })
        .collect();
    FeatureMatrix { feature_names: names(width), rows, labels, row_meta }
}

fn tree_fixture(m: usize, seed: u64) -> (TrainedModel, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..150).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let labels =
        rows.iter().map(|r| Label::Class(if r[0] + 0.6 * r[1] > 0.8 { "true" } else { "false" }.into())).collect();
    let spec = ModelSpec::new(TaskFamily::Classification, Algorithm::DecisionTree).with("max_depth", 4i64);
    (train(&fixture_matrix(rows.clone(), labels), &spec).unwrap(), rows)
}

fn linear_fixture(m: usize, seed: u64) -> (TrainedModel, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..150).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels = rows.iter().map(|r| Label::Value(2.0 * r[0] - r[1] + 0.5 * r[m - 1])).collect();
    let spec = ModelSpec::new(TaskFamily::Regression, Algorithm::LogisticOrLinearSgd);
    (train(&fixture_matrix(rows.clone(), labels), &spec).unwrap(), rows)
}

fn shapley_axioms() -> Verdict {
    let started = Instant::now();
    let mut checked = 0;
    for m in [3usize, 6, 10] {
        let (tree, rows) = tree_fixture(m, m as u64);
        let f = scalar_fn(&tree, None, tree.positive_class().unwrap());
        let ModelState::Single { estimator: Estimator::Tree(t) } = &tree.state else {
            return Err("tree fixture is not a single tree".into());
        };
        let used = t.split_features();
        let bg = rows[..10].to_vec();
        for x in &rows[30..36] {
            let a = shapley_exact(&*f, &names(m), x, &bg).map_err(|e| e.to_string())?;
            ensure(a.efficiency_gap().abs() < 1e-9, || format!("tree m={m}: efficiency gap {}", a.efficiency_gap()))?;
            for j in (0..m).filter(|j| !used.contains(j)) {
                ensure(a.values[j].abs() < 1e-9, || format!("tree m={m}: unused x{j} got {}", a.values[j]))?;
            }
            checked += 1;
        }

        let (lin, rows) = linear_fixture(m, 40 + m as u64);
        let g = scalar_fn(&lin, None, 0);
        let origin = vec![0.0; m];
        let w: Vec<f64> = (0..m)
            .map(|i| {
                let mut e = origin.clone();
                e[i] = 1.0;
                g(&e) - g(&origin)
            })
            .collect();
        let bg = rows[..8].to_vec();
        let mean: Vec<f64> = (0..m).map(|j| bg.iter().map(|b| b[j]).sum::<f64>() / bg.len() as f64).collect();
        for x in &rows[40..45] {
            let a = shapley_exact(&*g, &names(m), x, &bg).map_err(|e| e.to_string())?;
            ensure(a.efficiency_gap().abs() < 1e-9, || format!("linear m={m}: efficiency gap"))?;
            for i in 0..m {
                let closed = w[i] * (x[i] - mean[i]);
                ensure((a.values[i] - closed).abs() < 1e-9, || format!("linear m={m}: x{i} {} vs {closed}", a.values[i]))?;
            }
            checked += 1;
        }
    }
    // symmetry: interchangeable features with equal inputs share credit
    let sym = |r: &[f64]| (r[0] * r[1]).max(r[2]) + (r[0] + r[1]).sin();
    let x = [0.7, 0.7, 0.2, 0.9];
    let bg = vec![vec![0.1, 0.1, 0.5, 0.0], vec![0.4, 0.4, 0.0, 1.0], vec![0.9, 0.9, 0.3, 0.2]];
    let a = shapley_exact(&sym, &names(4), &x, &bg).map_err(|e| e.to_string())?;
    ensure((a.values[0] - a.values[1]).abs() < 1e-9, || "symmetric features differ".into())?;
    ensure(a.values[3].abs() < 1e-12, || "null player x3 got credit".into())?;

    let (tree, rows) = tree_fixture(6, 99);
    let f = scalar_fn(&tree, None, tree.positive_class().unwrap());
    let bg = rows[..12].to_vec();
    let mut worst = 0.0f64;
    for x in &rows[100..103] {
        let exact = shapley_exact(&*f, &names(6), x, &bg).map_err(|e| e.to_string())?;
        let sampled = shapley_sampled(&*f, &names(6), x, &bg, 2000, 11).map_err(|e| e.to_string())?;
        for (e, s) in exact.values.iter().zip(&sampled.values) {
            worst = worst.max((e - s).abs());
        }
    }
    ensure(worst <= 0.05, || format!("sampled deviates by {worst}"))?;
    within(started.elapsed(), Duration::from_secs(60))?;
    Ok(format!("axioms on {checked} explained rows; closed form exact; sampled max deviation {worst:.4}"))
}

// ---------------------------------------------------------------------------
// experiment

/// Best depth-2 tree over prefix-2 activity flags, found by trying all of them.
fn small_tree_search(log: &EventLog) -> (f64, f64, usize) {
    let mut traces: Vec<&Trace> = log.traces.iter().filter(|t| t.len() >= 2).collect();
    traces.sort_by_key(|t| (t.events[0].timestamp.micros, t.id.clone()));
    let cut = traces.len() * 4 / 5;
    let (train_t, test_t) = traces.split_at(cut);
    let mean = train_t.iter().map(|t| t.duration_secs()).sum::<f64>() / train_t.len() as f64;
    let acts: Vec<String> = log.traces.iter().flat_map(|t| t.events.iter().map(|e| e.activity.clone())).collect::<BTreeSet<_>>().into_iter().collect();
    let encode = |t: &Trace| -> (Vec<bool>, bool) {
        let present: Vec<bool> = acts.iter().map(|a| t.events[..2].iter().any(|e| &e.activity == a)).collect();
        (present, t.duration_secs() <= mean)
    };
    let train_d: Vec<(Vec<bool>, bool)> = train_t.iter().map(|t| encode(t)).collect();
    let test_d: Vec<(Vec<bool>, bool)> = test_t.iter().map(|t| encode(t)).collect();
    let majority = |rows: &[&(Vec<bool>, bool)]| rows.iter().filter(|r| r.1).count() * 2 >= rows.len();
    // a tree is (root, left split, right split); None means a leaf
    let mut best = (0.0, 0.0, 0);
    let f = acts.len();
    let mut tried = 0;
    for root in 0..f {
        for left in std::iter::once(None).chain((0..f).map(Some)) {
            for right in std::iter::once(None).chain((0..f).map(Some)) {
                tried += 1;
                let leaf_of = |path: (bool, Option<bool>)| -> bool {
                    let rows: Vec<&(Vec<bool>, bool)> = train_d
                        .iter()
                        .filter(|r| r.0[root] == path.0)
                        .filter(|r| match (path.0, path.1) {
                            (false, Some(v)) => left.is_some_and(|l| r.0[l] == v),
                            (true, Some(v)) => right.is_some_and(|l| r.0[l] == v),
                            _ => true,
                        })
                        .collect();
                    majority(&rows)
                };
                let predict = |x: &[bool]| -> bool {
                    let side = x[root];
                    let next = if side { right } else { left };
                    leaf_of((side, next.map(|n| x[n])))
                };
                let acc = |d: &[(Vec<bool>, bool)]| d.iter().filter(|r| predict(&r.0) == r.1).count() as f64 / d.len() as f64;
                let train_acc = acc(&train_d);
                if train_acc > best.0 {
                    best = (train_acc, acc(&test_d), tried);
                }
            }
        }
    }
    (best.0, best.1, tried)
}

fn experiment() -> Verdict {
    let started = Instant::now();
    let log = planted_log(&SynthSpec::new(400, 42));
    let (train_acc, test_acc, trees) = small_tree_search(&log);
    ensure(test_acc >= 0.85, || format!("planted signal not learnable: best small tree scores {test_acc:.3} held out"))?;

    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 4);
    svc.start_workers();
    let (base, stop, server) = spawn_server(svc.clone());
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let view: ComparisonView = rt.block_on(async {
        let client = reqwest::Client::new();
        let rec: Value =
            client.post(format!("{base}/v1/logs")).body(serialize_xes(&log)).send().await.unwrap().json().await.unwrap();
        let split: Value = client
            .post(format!("{base}/v1/splits"))
            .json(&json!({ "log_id": rec["id"], "name": "main", "train_fraction": 0.8 }))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let key = split["spec"]["split_key"].as_str().unwrap().to_string();
        let sub: Value =
            client.post(format!("{base}/v1/jobs")).json(&batch_of_eight(&key)).send().await.unwrap().json().await.unwrap();
        let ids: Vec<String> = sub["job_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        let deadline = Instant::now() + Duration::from_secs(290);
        loop {
            let done: Value = client.get(format!("{base}/v1/jobs?status=completed")).send().await.unwrap().json().await.unwrap();
            let failed: Value = client.get(format!("{base}/v1/jobs?status=error")).send().await.unwrap().json().await.unwrap();
            let finished = done["items"].as_array().unwrap().len() + failed["items"].as_array().unwrap().len();
            if finished >= ids.len() || Instant::now() > deadline {
                break;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        client
            .get(format!("{base}/v1/results/comparison?ids={}", ids.join(",")))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap()
    });
    let _ = stop.send(());
    server.join().unwrap();

    let completed = svc.jobs(&JobFilter { status: Some(JobStatus::Completed), ..Default::default() });
    ensure(completed.len() == 8, || format!("{} of 8 jobs completed", completed.len()))?;
    ensure(view.rows.len() == 8, || format!("{} comparison rows", view.rows.len()))?;
    for row in &view.rows {
        for m in Metric::CLASSIFICATION {
            let v = row.metrics.get(m.name()).copied().unwrap_or(f64::NAN);
            ensure(v.is_finite(), || format!("{}: {} missing", row.task.identity, m.name()))?;
        }
        let t = row.timing;
        ensure(
            [t.training_time, t.prediction_time, t.elapsed_total].iter().all(|v| v.is_finite() && *v >= 0.0),
            || format!("{}: timing incomplete", row.task.identity),
        )?;
    }
    let series_models: BTreeSet<&str> = view.per_prefix_series.iter().map(|s| s.model.as_str()).collect();
    ensure(series_models.len() == 4, || format!("{} per-prefix models", series_models.len()))?;
    ensure(
        view.per_prefix_series.iter().filter(|s| s.metric == "auc").all(|s| s.points.iter().map(|p| p.0).eq([2, 4])),
        || "per-prefix series do not cover lengths 2 and 4".into(),
    )?;
    ensure(TIMING_FIELDS.iter().all(|f| view.per_prefix_series.iter().any(|s| s.metric == *f)), || "timing series missing".into())?;
    ensure(!view.radar.polygons.is_empty() && !view.radar.axes.is_empty(), || "radar empty".into())?;
    let points = |g: &[ppm_core::eval::BubbleGroup]| g.iter().map(|g| g.points.len()).sum::<usize>();
    ensure(view.bubble.by_algorithm.len() == 2 && points(&view.bubble.by_algorithm) == 8, || "bubble by algorithm".into())?;
    ensure(view.bubble.by_encoding.len() == 2 && points(&view.bubble.by_encoding) == 8, || "bubble by encoding".into())?;

    // label-shuffled baseline for the best configuration
    let best = view
        .rows
        .iter()
        .max_by(|a, b| a.metrics["auc"].total_cmp(&b.metrics["auc"]))
        .ok_or("no rows")?;
    let record = svc.store().models.get(&best.model_fingerprint).ok_or("best model not stored")?;
    let cache = Cache::new(dir.path().join("cache"), svc.store().clone());
    let pipeline = Pipeline { store: svc.store(), cache: &cache };
    let loaded = pipeline.loaded_split(&record.config.split_key).map_err(|e| e.to_string())?;
    let data = pipeline.labeled(&record.config, &loaded).map_err(|e| e.to_string())?;
    let mut shuffled = data.train.clone();
    shuffled.labels.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let baseline_model = train(&shuffled, &record.config.model).map_err(|e| e.to_string())?;
    let Prediction::Classification { classes, scores, .. } = predict(&baseline_model, &data.test).map_err(|e| e.to_string())?
    else {
        return Err("baseline is not a classifier".into());
    };
    let pos = classes.iter().position(|c| c == "true").ok_or("no positive class")?;
    let truth: Vec<bool> = data.test.labels.iter().map(|l| l.as_class() == Some("true")).collect();
    let baseline = pair_auc(&scores.iter().map(|s| s[pos]).collect::<Vec<_>>(), &truth);
    let best_auc = best.metrics["auc"];
    ensure(best_auc >= baseline + 0.2, || format!("best AUC {best_auc:.3} vs shuffled {baseline:.3}"))?;
    svc.shutdown();
    within(started.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "small-tree oracle {train_acc:.3}/{test_acc:.3} over {trees} trees; 8 jobs, 8 rows; best AUC {best_auc:.3} vs shuffled {baseline:.3}; {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// orchestration

fn orchestration() -> Verdict {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 4);
    let (_, split) = seed_split(&svc, 200, 77);
    let key = split.spec.split_key.clone();
    let prefixes: Vec<PrefixSpec> = (1..=5)
        .flat_map(|n| [PrefixSpec::fixed(n, ShortTracePolicy::Discard), PrefixSpec::fixed(n, ShortTracePolicy::ZeroPad)])
        .collect();
    let encodings = [EncodingMethod::Boolean, EncodingMethod::SimpleIndex];
    let valid = request(&key, &Algorithm::ALL, &encodings, &prefixes, duration_label());
    let failing = doomed(&key, &Algorithm::ALL, &encodings);
    let mut ids: Vec<String> = svc.submit(&valid).map_err(|e| e.to_string())?.into_iter().map(|j| j.id).collect();
    ensure(ids.len() == 100, || format!("{} valid jobs expanded", ids.len()))?;
    ids.extend(svc.submit(&failing).map_err(|e| e.to_string())?.into_iter().map(|j| j.id));
    svc.start_workers();
    ensure(svc.wait_idle(Duration::from_secs(600)), || "queue did not drain".into())?;

    let jobs: Vec<JobRecord> = ids.iter().map(|id| svc.job(id).unwrap()).collect();
    let completed = jobs.iter().filter(|j| j.status == JobStatus::Completed).count();
    let errors: Vec<&JobRecord> = jobs.iter().filter(|j| j.status == JobStatus::Error).collect();
    ensure(completed == 100 && errors.len() == 10, || format!("{completed} completed, {} errors", errors.len()))?;
    ensure(
        errors.iter().all(|j| j.error_detail.as_ref().is_some_and(|d| d.code == "missing_label_attribute")),
        || "unexpected error codes".into(),
    )?;
    let runs = svc.orchestrator().executions();
    ensure(ids.iter().all(|id| runs.get(id) == Some(&1)) && runs.len() == 110, || "a job ran other than once".into())?;
    let pool = svc.pool_status();
    ensure(pool.alive == 4, || format!("{} of 4 workers alive", pool.alive))?;

    // kill a worker mid-job while a second batch runs
    let before: BTreeMap<String, String> =
        svc.store().jobs.list().into_iter().map(|j| (j.id.clone(), serde_json::to_string(&j).unwrap())).collect();
    let mut second = batch_of_eight(&key);
    second.intercase = true;
    // the first job of the new batch to reach training takes the kill
    let chosen: Arc<std::sync::Mutex<Option<String>>> = Arc::default();
    let slot = chosen.clone();
    let earlier: BTreeSet<String> = before.keys().cloned().collect();
    svc.orchestrator().set_hook(Some(Arc::new(move |id: &str, stage: Stage| {
        let mut v = slot.lock().unwrap();
        if stage == Stage::Train && !earlier.contains(id) && v.as_deref().is_none_or(|x| x == id) {
            *v = Some(id.to_string());
            HookAction::Kill
        } else {
            HookAction::Continue
        }
    })));
    let batch: Vec<String> = svc.submit(&second).map_err(|e| e.to_string())?.into_iter().map(|j| j.id).collect();
    ensure(svc.wait_idle(Duration::from_secs(300)), || "second batch did not drain".into())?;
    let victim = chosen.lock().unwrap().clone().ok_or("no job reached training")?;
    let deadline = Instant::now() + Duration::from_secs(10);
    while svc.job(&victim).unwrap().status == JobStatus::Running && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    let v = svc.job(&victim).unwrap();
    ensure(v.status == JobStatus::Error, || format!("victim ended {:?}", v.status))?;
    ensure(v.error_detail.as_ref().is_some_and(|d| d.code == "worker_lost"), || "victim not marked worker_lost".into())?;
    for id in batch.iter().filter(|id| **id != victim) {
        ensure(svc.job(id).unwrap().status == JobStatus::Completed, || format!("{id} did not complete"))?;
    }
    for (id, text) in &before {
        let now = serde_json::to_string(&svc.job(id).unwrap()).unwrap();
        ensure(&now == text, || format!("{id} changed during the kill"))?;
    }
    let pool = svc.pool_status();
    ensure(pool.respawns >= 1 && pool.alive == 4, || format!("respawns {}, alive {}", pool.respawns, pool.alive))?;
    let runs = svc.orchestrator().executions();
    ensure(runs.values().all(|n| *n == 1), || "re-execution after kill".into())?;
    svc.shutdown();
    let disk = Store::open(dir.path().join("store")).map_err(|e| e.to_string())?;
    ensure(disk.jobs.list() == svc.store().jobs.list(), || "disk records diverge from memory".into())?;
    ensure(disk.dangling_references().is_empty(), || format!("dangling: {:?}", disk.dangling_references()))?;
    Ok(format!(
        "100 completed, 10 errors, each run once, 4/4 alive; killed worker on {victim}, {} respawn(s), other records intact",
        pool.respawns
    ))
}

// ---------------------------------------------------------------------------
// cache

fn caching() -> Verdict {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 4);
    svc.start_workers();
    let (_, split) = seed_split(&svc, 200, 88);
    let req = batch_of_eight(&split.spec.split_key);
    svc.submit(&req).map_err(|e| e.to_string())?;
    ensure(svc.wait_idle(LONG), || "first batch stuck".into())?;
    let first = svc.cache_stats();
    svc.submit(&req).map_err(|e| e.to_string())?;
    ensure(svc.wait_idle(LONG), || "second batch stuck".into())?;
    let second = svc.cache_stats();
    let labeled = |s: &ppm_workbench::cache::CacheStats| s.kind(ArtifactKind::LabeledMatrix);
    let rebuilt: u64 = ArtifactKind::ALL.iter().map(|k| second.kind(*k).builds - first.kind(*k).builds).sum();
    ensure(rebuilt == 0, || format!("rerun performed {rebuilt} builds"))?;
    let hits = labeled(&second).hits - labeled(&first).hits;
    ensure(hits >= 8, || format!("only {hits} label/encode hits on rerun"))?;
    let done = svc.jobs(&JobFilter { status: Some(JobStatus::Completed), ..Default::default() }).len();
    ensure(done == 16, || format!("{done} of 16 jobs completed"))?;
    svc.shutdown();

    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 4);
    let (_, split) = seed_split(&svc, 200, 89);
    let req = request(
        &split.spec.split_key,
        &[Algorithm::GradientBoostedTrees],
        &[EncodingMethod::ComplexIndex],
        &[PrefixSpec::fixed(3, ShortTracePolicy::ZeroPad)],
        duration_label(),
    );
    svc.start_workers();
    let handles: Vec<_> = (0..2)
        .map(|_| {
            let (svc, req) = (svc.clone(), req.clone());
            std::thread::spawn(move || svc.submit(&req))
        })
        .collect();
    for h in handles {
        h.join().map_err(|_| "submitter panicked".to_string())?.map_err(|e| e.to_string())?;
    }
    ensure(svc.wait_idle(LONG), || "duplicates stuck".into())?;
    let stats = svc.cache_stats();
    ensure(stats.max_builds_per_key() == 1, || format!("a key was built {} times", stats.max_builds_per_key()))?;
    let keys = stats.builds_by_key.len();
    let waited: u64 = ArtifactKind::ALL.iter().map(|k| stats.kind(*k).waits + stats.kind(*k).hits).sum();
    svc.shutdown();
    Ok(format!("rerun: 0 builds, {hits} label/encode hits; concurrent duplicates: {keys} keys built once each, {waited} reuses"))
}

// ---------------------------------------------------------------------------
// load

#[derive(Default)]
struct Tally {
    ok: AtomicU64,
    failed: AtomicU64,
    latency_us: std::sync::Mutex<Vec<u64>>,
}

async fn drive(client: reqwest::Client, make: Arc<dyn Fn(&reqwest::Client) -> reqwest::RequestBuilder + Send + Sync>, rate: f64, window: Duration, tally: Arc<Tally>) {
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
    let end = Instant::now() + window;
    let mut inflight = Vec::new();
    while Instant::now() < end {
        tick.tick().await;
        let req = make(&client);
        let tally = tally.clone();
        inflight.push(tokio::spawn(async move {
            let t0 = Instant::now();
            let ok = match req.send().await {
                Ok(r) => r.status().is_success() && r.bytes().await.is_ok(),
                Err(_) => false,
            };
            if ok {
                tally.ok.fetch_add(1, Ordering::Relaxed);
                tally.latency_us.lock().unwrap().push(t0.elapsed().as_micros() as u64);
            } else {
                tally.failed.fetch_add(1, Ordering::Relaxed);
            }
        }));
    }
    for h in inflight {
        let _ = h.await;
    }
}

fn workload() -> Verdict {
    let secs: u64 = std::env::var("PPM_LOAD_SECS").ok().and_then(|v| v.parse().ok()).unwrap_or(60);
    let window = Duration::from_secs(secs);
    let dir = TempDir::new().unwrap();
    let svc = service(&dir, 4);
    svc.start_workers();
    let (_, split) = seed_split(&svc, 300, 99);
    svc.submit(&batch_of_eight(&split.spec.split_key)).map_err(|e| e.to_string())?;
    ensure(svc.wait_idle(LONG), || "warm-up batch stuck".into())?;
    let (base, stop, server) = spawn_server(svc.clone());
    let job = serde_json::to_vec(&request(
        &split.spec.split_key,
        &[Algorithm::DecisionTree],
        &[EncodingMethod::Boolean],
        &[PrefixSpec::fixed(2, ShortTracePolicy::Discard)],
        duration_label(),
    ))
    .unwrap();
    let submit = Arc::new(Tally::default());
    let browse = Arc::new(Tally::default());
    let rate = 66.0;
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let started = Instant::now();
    rt.block_on(async {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(5)).build().unwrap();
        let post_url = format!("{base}/v1/jobs");
        let get_url = format!("{base}/v1/results");
        let body = job.clone();
        let post: Arc<dyn Fn(&reqwest::Client) -> reqwest::RequestBuilder + Send + Sync> = Arc::new(move |c| {
            c.post(&post_url).header("content-type", "application/json").body(body.clone())
        });
        let get: Arc<dyn Fn(&reqwest::Client) -> reqwest::RequestBuilder + Send + Sync> = Arc::new(move |c| c.get(&get_url));
        tokio::join!(
            drive(client.clone(), post, rate, window, submit.clone()),
            drive(client.clone(), get, rate, window, browse.clone()),
        );
    });
    let elapsed = started.elapsed().as_secs_f64().max(window.as_secs_f64());
    let _ = stop.send(());
    server.join().unwrap();
    let drained = svc.wait_idle(LONG);
    svc.shutdown();

    let summary = |name: &str, t: &Tally| {
        let ok = t.ok.load(Ordering::Relaxed);
        let bad = t.failed.load(Ordering::Relaxed);
        let mut lat = t.latency_us.lock().unwrap().clone();
        lat.sort_unstable();
        let pct = |p: f64| lat.get(((lat.len() as f64 * p) as usize).min(lat.len().saturating_sub(1))).copied().unwrap_or(0);
        let rps = ok as f64 / elapsed;
        let err = bad as f64 / (ok + bad).max(1) as f64;
        (rps, err, format!("{name} {rps:.1} rps, {:.2}% errors, p50 {:.1} ms, p99 {:.1} ms", err * 100.0, pct(0.5) as f64 / 1e3, pct(0.99) as f64 / 1e3))
    };
    let (s_rps, s_err, s_txt) = summary("submit", &submit);
    let (b_rps, b_err, b_txt) = summary("browse", &browse);
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("{s_txt}; {b_txt}; {secs}s window, {cpus} cpu(s)");
    ensure(drained, || format!("{detail}; submitted jobs did not drain"))?;
    ensure(secs >= 60, || format!("{detail}; window shorter than 60s"))?;
    ensure(s_rps >= 60.0 && b_rps >= 60.0, || format!("{detail}; below 60 rps"))?;
    ensure(s_err <= 0.05 && b_err <= 0.05, || format!("{detail}; error rate above 5%"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("encoding oracle equivalence", encoding_oracle),
        ("metric correctness", metric_correctness),
        ("shapley axioms and oracle", shapley_axioms),
        ("2x2x2 experiment on a planted signal", experiment),
        ("orchestration exactly-once with worker kill", orchestration),
        ("cache reuse and single build per key", caching),
        ("sustained load on submit and browse", workload),
    ];
    let only = std::env::var("PPM_ACCEPTANCE_ONLY").ok();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_deref().is_some_and(|o| !o.split(',').any(|n| n.trim() == (i + 1).to_string())) {
            continue;
        }
        let t0 = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS  [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  [{}] {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
