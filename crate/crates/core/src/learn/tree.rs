//! CART trees: Gini splits for classes, variance splits for values.
//!
//! Split search visits features in ascending index and thresholds in
//! ascending order and only replaces the incumbent on a strictly lower
//! impurity, so ties go to the lowest feature, then the lowest threshold.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Target<'a> {
    Classes { y: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per split; `None` considers all.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

struct Stats {
    n: f64,
    counts: Vec<f64>,
    sum: f64,
    sum_sq: f64,
}

impl Stats {
    fn new(target: &Target) -> Self {
        let k = match target {
            Target::Classes { n_classes, .. } => *n_classes,
            Target::Values(_) => 0,
        };
        Stats { n: 0.0, counts: vec![0.0; k], sum: 0.0, sum_sq: 0.0 }
    }

    fn add(&mut self, target: &Target, row: usize) {
        self.n += 1.0;
        match target {
            Target::Classes { y, .. } => self.counts[y[row]] += 1.0,
            Target::Values(v) => {
                self.sum += v[row];
                self.sum_sq += v[row] * v[row];
            }
        }
    }

    fn remove(&mut self, target: &Target, row: usize) {
        self.n -= 1.0;
        match target {
            Target::Classes { y, .. } => self.counts[y[row]] -= 1.0,
            Target::Values(v) => {
                self.sum -= v[row];
                self.sum_sq -= v[row] * v[row];
            }
        }
    }

    /// Impurity scaled by node size: n·Gini, or the sum of squared deviations.
    fn weighted_impurity(&self, target: &Target) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        match target {
            Target::Classes { .. } => self.n - self.counts.iter().map(|c| c * c).sum::<f64>() / self.n,
            Target::Values(_) => (self.sum_sq - self.sum * self.sum / self.n).max(0.0),
        }
    }

    fn leaf_value(&self, target: &Target) -> Vec<f64> {
        match target {
            Target::Classes { .. } => self.counts.iter().map(|c| c / self.n).collect(),
            Target::Values(_) => vec![self.sum / self.n],
        }
    }

    fn is_pure(&self, target: &Target) -> bool {
        match target {
            Target::Classes { .. } => self.counts.iter().filter(|c| **c > 0.0).count() <= 1,
            Target::Values(_) => self.weighted_impurity(target) <= 1e-12 * self.n.max(1.0),
        }
    }
}

impl Tree {
    /// Fits on `rows` (indices into `x`, repeats allowed for bootstrap).
    pub(crate) fn fit(x: &[Vec<f64>], target: &Target, rows: &[usize], params: &TreeParams, rng: &mut ChaCha8Rng) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        tree.grow(x, target, rows.to_vec(), 0, params, rng);
        tree
    }

    fn grow(
        &mut self,
        x: &[Vec<f64>],
        target: &Target,
        rows: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let mut stats = Stats::new(target);
        for &r in &rows {
            stats.add(target, r);
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: stats.leaf_value(target) });
        if depth >= params.max_depth || rows.len() < params.min_samples_split.max(2) || stats.is_pure(target) {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, target, &rows, params, rng) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[r][feature] <= threshold);
        let left = self.grow(x, target, left_rows, depth + 1, params, rng);
        let right = self.grow(x, target, right_rows, depth + 1, params, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub(crate) fn set_leaf(&mut self, index: usize, value: Vec<f64>) {
        self.nodes[index] = Node::Leaf { value };
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Features used by any split.
    pub fn split_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn best_split(
    x: &[Vec<f64>],
    target: &Target,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let width = x.first().map_or(0, Vec::len);
    let features: Vec<usize> = match params.max_features {
        Some(m) if m < width => {
            let mut f = sample(rng, width, m.max(1)).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..width).collect(),
    };
    let min_leaf = params.min_samples_leaf.max(1);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut sorted = rows.to_vec();
    for f in features {
        sorted.sort_by(|a, b| x[*a][f].total_cmp(&x[*b][f]));
        let mut left = Stats::new(target);
        let mut right = Stats::new(target);
        for &r in &sorted {
            right.add(target, r);
        }
        for i in 0..sorted.len() - 1 {
            let r = sorted[i];
            left.add(target, r);
            right.remove(target, r);
            let (a, b) = (x[r][f], x[sorted[i + 1]][f]);
            if a == b || i + 1 < min_leaf || sorted.len() - i - 1 < min_leaf {
                continue;
            }
            let impurity = left.weighted_impurity(target) + right.weighted_impurity(target);
            if best.is_none_or(|(_, _, bi)| impurity < bi) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                best = Some((f, threshold, impurity));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}
