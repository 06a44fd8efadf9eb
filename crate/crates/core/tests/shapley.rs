mod common;

use common::{class, matrix};
use ppm_core::explain::{explain_event, explain_log, explain_trace, shapley_exact, shapley_sampled, ExplainOptions};
use ppm_core::learn::scalar_fn;
use ppm_core::prelude::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("x{i}")).collect()
}

/// Trained tree over `m` features where the label depends on x0 and x1.
fn tree_model(m: usize, seed: u64) -> (TrainedModel, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..120).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let labels = rows.iter().map(|r| class(if r[0] + 0.5 * r[1] > 0.8 { "true" } else { "false" })).collect();
    let data = matrix(rows.clone(), labels);
    let spec = ModelSpec::new(TaskFamily::Classification, Algorithm::DecisionTree).with("max_depth", 4i64);
    (train(&data, &spec).unwrap(), rows)
}

/// Shapley value computed straight from the permutation definition.
fn permutation_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut phi = vec![0.0; m];
    let mut count = 0.0;
    loop {
        count += 1.0;
        for b in bg {
            let mut z = b.clone();
            let mut prev = f(&z);
            for &j in &perm {
                z[j] = x[j];
                let next = f(&z);
                phi[j] += (next - prev) / bg.len() as f64;
                prev = next;
            }
        }
        // next lexicographic permutation
        let Some(i) = (0..m.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
        let j = (i + 1..m).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    phi.iter().map(|p| p / count).collect()
}

#[test]
fn exact_matches_permutation_definition() {
    let (model, rows) = tree_model(5, 1);
    let f = scalar_fn(&model, None, 1);
    let bg = rows[..6].to_vec();
    let a = shapley_exact(&*f, &names(5), &rows[50], &bg).unwrap();
    let oracle = permutation_oracle(&*f, &rows[50], &bg);
    for (x, y) in a.values.iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn axioms_on_tree_and_linear_models() {
    for m in [3usize, 6, 10] {
        let (model, rows) = tree_model(m, m as u64);
        let f = scalar_fn(&model, None, model.positive_class().unwrap());
        let bg = rows[..8].to_vec();
        for x in &rows[20..25] {
            let a = shapley_exact(&*f, &names(m), x, &bg).unwrap();
            assert!(a.efficiency_gap().abs() < 1e-9);
            // the tree never reads features it does not split on
            let ppm_core::learn::ModelState::Single { estimator: ppm_core::learn::Estimator::Tree(t) } = &model.state else {
                panic!()
            };
            let used = t.split_features();
            for j in (0..m).filter(|j| !used.contains(j)) {
                assert!(a.values[j].abs() < 1e-12);
            }
        }
    }
    let w = [1.5, -2.0, 0.25, 3.0];
    let f = |r: &[f64]| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = shapley_exact(&f, &names(4), &x, &[b.clone()]).unwrap();
        for i in 0..4 {
            assert!((a.values[i] - w[i] * (x[i] - b[i])).abs() < 1e-9);
        }
    }
}

#[test]
fn symmetric_features_share_credit() {
    let f = |r: &[f64]| (r[0] * r[1]).max(r[2]);
    let x = [2.0, 2.0, 1.0];
    let bg = vec![vec![0.0, 0.0, 0.5], vec![1.0, 1.0, 0.0]];
    let a = shapley_exact(&f, &names(3), &x, &bg).unwrap();
    assert!((a.values[0] - a.values[1]).abs() < 1e-12);
}

#[test]
fn sampled_tracks_exact_on_six_features() {
    let (model, rows) = tree_model(6, 21);
    let f = scalar_fn(&model, None, 1);
    let bg = rows[..10].to_vec();
    let x = &rows[70];
    let exact = shapley_exact(&*f, &names(6), x, &bg).unwrap();
    let sampled = shapley_sampled(&*f, &names(6), x, &bg, 2000, 5).unwrap();
    for (e, s) in exact.values.iter().zip(&sampled.values) {
        assert!((e - s).abs() <= 0.05, "{e} vs {s}");
    }
    // averaging many seeds of a cheap estimate approaches the exact values
    let mut mean = vec![0.0; 6];
    for seed in 0..50 {
        let s = shapley_sampled(&*f, &names(6), x, &bg, 4, seed).unwrap();
        mean.iter_mut().zip(&s.values).for_each(|(m, v)| *m += v / 50.0);
    }
    for (e, m) in exact.values.iter().zip(&mean) {
        assert!((e - m).abs() < 0.05);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn efficiency_and_null_player(
        w in prop::collection::vec(-3.0f64..3.0, 1..8),
        seed in any::<u64>(),
        dead in 0usize..8,
    ) {
        let m = w.len();
        let dead = dead % m;
        // nonlinear in every feature but `dead`
        let f = |r: &[f64]| {
            let lin: f64 = r.iter().zip(&w).enumerate().filter(|(i, _)| *i != dead).map(|(_, (a, b))| a * b).sum();
            lin.tanh() + 0.1 * lin * lin
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bg: Vec<Vec<f64>> = (0..3).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a = shapley_exact(&f, &names(m), &x, &bg).unwrap();
        prop_assert!(a.efficiency_gap().abs() < 1e-9);
        prop_assert!(a.values[dead].abs() < 1e-12);
    }
}

#[test]
fn views_over_a_trained_model() {
    let (model, rows) = tree_model(3, 8);
    let mut data = matrix(rows[..5].to_vec(), vec![]);
    for (i, meta) in data.row_meta.iter_mut().enumerate() {
        meta.trace_id = "t".into();
        meta.prefix_length = i + 1;
    }
    let bg = rows[..20].to_vec();
    let opts = ExplainOptions::default();
    let ExplanationView::Trace { prefix_lengths, series, .. } = explain_trace(&model, &data, &bg, &opts).unwrap() else {
        panic!()
    };
    assert_eq!(prefix_lengths, [1, 2, 3, 4, 5]);
    assert_eq!(series.len(), 3);
    for k in 0..5 {
        let ExplanationView::Event { attribution, prefix_length, .. } = explain_event(&model, &data, k, &bg, None, &opts).unwrap()
        else {
            panic!()
        };
        assert_eq!(prefix_length, k + 1);
        assert!(attribution.efficiency_gap().abs() < 1e-9);
        for (s, v) in series.iter().zip(&attribution.values) {
            assert_eq!(s.values[k], *v);
        }
    }
    let ExplanationView::Log { groups, .. } = explain_log(&model, &data, "x0", None).unwrap() else { panic!() };
    assert_eq!(groups.iter().map(|g| g.count).sum::<usize>(), 5);
    assert!(matches!(explain_log(&model, &data, "nope", None), Err(Error::UnknownFeature(_))));
}
