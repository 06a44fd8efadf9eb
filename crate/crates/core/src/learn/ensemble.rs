//! Bagged forests and gradient-boosted trees.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Target, Tree, TreeParams};
use crate::math::{ln, sigmoid, softmax};

/// Per-tree generator: the model seed on its own ChaCha stream.
pub(crate) fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub(crate) fn fit(
        x: &[Vec<f64>],
        target: &Target,
        n_trees: usize,
        bootstrap: bool,
        params: &TreeParams,
        seed: u64,
    ) -> Forest {
        let n = x.len();
        let trees = (0..n_trees.max(1))
            .map(|t| {
                let mut rng = tree_rng(seed, t);
                let rows: Vec<usize> =
                    if bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
                Tree::fit(x, target, &rows, params, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = self.trees[0].predict_row(row).to_vec();
        for tree in &self.trees[1..] {
            for (o, v) in out.iter_mut().zip(tree.predict_row(row)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    /// Two classes; the raw score is the log-odds of class index 1.
    Binary,
    Multinomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    pub loss: Loss,
    pub init: Vec<f64>,
    pub learning_rate: f64,
    /// One tree per raw score per round.
    pub rounds: Vec<Vec<Tree>>,
}

const P_FLOOR: f64 = 1e-6;

impl Boosted {
    pub(crate) fn fit(x: &[Vec<f64>], target: &Target, rounds: usize, learning_rate: f64, max_depth: usize) -> Boosted {
        let n = x.len();
        let rows: Vec<usize> = (0..n).collect();
        let params = TreeParams { max_depth, min_samples_split: 2, min_samples_leaf: 1, max_features: None };
        // residual trees never sample features, the generator is unused
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, init, dims) = match target {
            Target::Values(y) => (Loss::Squared, vec![y.iter().sum::<f64>() / n as f64], 1),
            Target::Classes { y, n_classes } => {
                let mut prior = vec![0.0; *n_classes];
                for &c in y.iter() {
                    prior[c] += 1.0 / n as f64;
                }
                let prior: Vec<f64> = prior.iter().map(|p| p.clamp(P_FLOOR, 1.0 - P_FLOOR)).collect();
                if *n_classes == 2 {
                    (Loss::Binary, vec![ln(prior[1] / prior[0])], 1)
                } else {
                    (Loss::Multinomial, prior.iter().map(|p| ln(*p)).collect(), *n_classes)
                }
            }
        };
        let mut raw: Vec<Vec<f64>> = vec![init.clone(); n];
        let mut model = Boosted { loss, init, learning_rate, rounds: Vec::new() };
        for _ in 0..rounds {
            let probs: Vec<Vec<f64>> = raw.iter().map(|r| model.link(r)).collect();
            let mut round = Vec::with_capacity(dims);
            for d in 0..dims {
                let (residual, hess): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|i| match (target, loss) {
                        (Target::Values(y), _) => (y[i] - raw[i][0], 1.0),
                        (Target::Classes { y, .. }, Loss::Binary) => {
                            let p = probs[i][1];
                            ((y[i] == 1) as u8 as f64 - p, p * (1.0 - p))
                        }
                        (Target::Classes { y, .. }, _) => {
                            let r = (y[i] == d) as u8 as f64 - probs[i][d];
                            (r, r.abs() * (1.0 - r.abs()))
                        }
                    })
                    .unzip();
                let mut tree = Tree::fit(x, &Target::Values(&residual), &rows, &params, &mut rng);
                if loss != Loss::Squared {
                    newton_leaves(&mut tree, x, &residual, &hess, loss, dims);
                }
                for (i, row) in x.iter().enumerate() {
                    raw[i][d] += learning_rate * tree.predict_row(row)[0];
                }
                round.push(tree);
            }
            model.rounds.push(round);
        }
        model
    }

    fn raw(&self, row: &[f64]) -> Vec<f64> {
        let mut f = self.init.clone();
        for round in &self.rounds {
            for (d, tree) in round.iter().enumerate() {
                f[d] += self.learning_rate * tree.predict_row(row)[0];
            }
        }
        f
    }

    fn link(&self, raw: &[f64]) -> Vec<f64> {
        match self.loss {
            Loss::Squared => raw.to_vec(),
            Loss::Binary => {
                let p = sigmoid(raw[0]);
                vec![1.0 - p, p]
            }
            Loss::Multinomial => {
                let mut v = raw.to_vec();
                softmax(&mut v);
                v
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        self.link(&self.raw(row))
    }
}

/// Replaces leaf means with one Newton step on the log-loss.
fn newton_leaves(tree: &mut Tree, x: &[Vec<f64>], residual: &[f64], hess: &[f64], loss: Loss, dims: usize) {
    let mut num = vec![0.0; tree.nodes.len()];
    let mut den = vec![0.0; tree.nodes.len()];
    for (i, row) in x.iter().enumerate() {
        let leaf = tree.leaf_index(row);
        num[leaf] += residual[i];
        den[leaf] += hess[i];
    }
    let scale = if loss == Loss::Multinomial { (dims as f64 - 1.0) / dims as f64 } else { 1.0 };
    for leaf in 0..tree.nodes.len() {
        if matches!(tree.nodes[leaf], super::tree::Node::Leaf { .. }) && den[leaf] > 0.0 {
            tree.set_leaf(leaf, vec![scale * num[leaf] / den[leaf].max(1e-12)]);
        }
    }
}
