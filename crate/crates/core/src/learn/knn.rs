use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tree::Target;
use crate::math::squared_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoredTarget {
    Classes { y: Vec<usize>, n_classes: usize },
    Values { y: Vec<f64> },
}

/// Stored training rows; prediction votes (or averages) over the `k`
/// Euclidean-nearest rows, distance ties broken by row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub target: StoredTarget,
}

impl Knn {
    pub(crate) fn fit(x: &[Vec<f64>], target: &Target, k: usize) -> Knn {
        let target = match target {
            Target::Classes { y, n_classes } => StoredTarget::Classes { y: y.to_vec(), n_classes: *n_classes },
            Target::Values(y) => StoredTarget::Values { y: y.to_vec() },
        };
        Knn { k: k.clamp(1, x.len().max(1)), rows: x.to_vec(), target }
    }

    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.rows.iter().enumerate().map(|(i, r)| (squared_distance(r, row), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let near = self.neighbours(row);
        let k = near.len() as f64;
        match &self.target {
            StoredTarget::Classes { y, n_classes } => {
                let mut votes = vec![0.0; *n_classes];
                for i in near {
                    votes[y[i]] += 1.0 / k;
                }
                votes
            }
            StoredTarget::Values { y } => vec![near.iter().map(|i| y[*i]).sum::<f64>() / k],
        }
    }
}
