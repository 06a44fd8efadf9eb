use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::squared_distance;

const MAX_ITERATIONS: usize = 100;

/// Lloyd's k-means with greedy farthest-point seeding: the first centroid is
/// a seeded random row, each next one the row farthest from those chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
}

impl KMeans {
    /// Caller guarantees `1 <= k <= x.len()`.
    pub(crate) fn fit(x: &[Vec<f64>], k: usize, seed: u64) -> (KMeans, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = rng.random_range(0..x.len());
        let mut centroids = vec![x[first].clone()];
        let mut nearest: Vec<f64> = x.iter().map(|r| squared_distance(r, &x[first])).collect();
        while centroids.len() < k {
            let mut far = 0;
            for (i, d) in nearest.iter().enumerate() {
                if *d > nearest[far] {
                    far = i;
                }
            }
            centroids.push(x[far].clone());
            for (i, r) in x.iter().enumerate() {
                nearest[i] = nearest[i].min(squared_distance(r, &x[far]));
            }
        }
        let mut model = KMeans { centroids };
        let mut assignment: Vec<usize> = x.iter().map(|r| model.assign(r)).collect();
        for _ in 0..MAX_ITERATIONS {
            let width = x[0].len();
            let mut sums = vec![vec![0.0; width]; k];
            let mut counts = vec![0usize; k];
            for (r, &c) in x.iter().zip(&assignment) {
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(r) {
                    *s += v;
                }
            }
            for c in 0..k {
                // empty clusters keep their centroid
                if counts[c] > 0 {
                    model.centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            let next: Vec<usize> = x.iter().map(|r| model.assign(r)).collect();
            if next == assignment {
                break;
            }
            assignment = next;
        }
        (model, assignment)
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign(&self, row: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = squared_distance(row, c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}
