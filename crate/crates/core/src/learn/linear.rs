//! Regularized linear models trained by full-batch gradient descent.
//!
//! Each pass backtracks the step (Armijo condition) from the configured
//! learning rate, so the training loss never increases across passes.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tree::Target;
use crate::math::{ln, softmax, sqrt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LinearKind {
    /// Multinomial logistic regression over `n_classes` outputs.
    Softmax { n_classes: usize },
    /// Least squares on the standardized target.
    LeastSquares { y_mean: f64, y_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub kind: LinearKind,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// One row per output, bias last.
    pub weights: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub l2: f64,
}

pub(crate) enum LinearTarget<'a> {
    Classes(&'a [usize]),
    Values(Vec<f64>),
}

impl Linear {
    pub(crate) fn fit(x: &[Vec<f64>], target: &Target, epochs: usize, learning_rate: f64, l2: f64) -> Linear {
        let width = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut means = vec![0.0; width];
        let mut scales = vec![0.0; width];
        for row in x {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        for row in x {
            for j in 0..width {
                scales[j] += (row[j] - means[j]) * (row[j] - means[j]) / n;
            }
        }
        let scales: Vec<f64> = scales.iter().map(|v| if *v > 1e-24 { sqrt(*v) } else { 1.0 }).collect();
        let kind = match target {
            Target::Classes { n_classes, .. } => LinearKind::Softmax { n_classes: *n_classes },
            Target::Values(y) => {
                let mean = y.iter().sum::<f64>() / n;
                let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                LinearKind::LeastSquares { y_mean: mean, y_scale: if var > 1e-24 { sqrt(var) } else { 1.0 } }
            }
        };
        let outputs = match kind {
            LinearKind::Softmax { n_classes } => n_classes,
            LinearKind::LeastSquares { .. } => 1,
        };
        let mut model = Linear { kind, means, scales, weights: vec![vec![0.0; width + 1]; outputs], learning_rate, l2 };
        model.descend(x, target, epochs);
        model
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn linear_target<'a>(&self, target: &Target<'a>) -> LinearTarget<'a> {
        match (target, &self.kind) {
            (Target::Classes { y, .. }, _) => LinearTarget::Classes(y),
            (Target::Values(y), LinearKind::LeastSquares { y_mean, y_scale }) => {
                LinearTarget::Values(y.iter().map(|v| (v - y_mean) / y_scale).collect())
            }
            (Target::Values(y), _) => LinearTarget::Values(y.to_vec()),
        }
    }

    /// Further gradient passes on `x`, keeping the fitted standardization.
    pub(crate) fn descend(&mut self, x: &[Vec<f64>], target: &Target, epochs: usize) {
        let z: Vec<Vec<f64>> = x.iter().map(|r| self.standardize(r)).collect();
        let t = self.linear_target(target);
        for _ in 0..epochs {
            let (loss, grad) = self.loss_grad(&self.weights, &z, &t);
            let g2: f64 = grad.iter().flatten().map(|g| g * g).sum();
            if g2 < 1e-20 {
                break;
            }
            let mut step = self.learning_rate;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<Vec<f64>> = self
                    .weights
                    .iter()
                    .zip(&grad)
                    .map(|(w, g)| w.iter().zip(g).map(|(wi, gi)| wi - step * gi).collect())
                    .collect();
                let (trial_loss, _) = self.loss_grad(&trial, &z, &t);
                if trial_loss <= loss - 1e-4 * step * g2 {
                    self.weights = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }

    /// Mean training loss (cross-entropy or half squared error) plus the L2
    /// penalty on non-bias weights.
    pub(crate) fn loss(&self, x: &[Vec<f64>], target: &Target) -> f64 {
        let z: Vec<Vec<f64>> = x.iter().map(|r| self.standardize(r)).collect();
        self.loss_grad(&self.weights, &z, &self.linear_target(target)).0
    }

    fn loss_grad(&self, w: &[Vec<f64>], z: &[Vec<f64>], t: &LinearTarget) -> (f64, Vec<Vec<f64>>) {
        let n = z.len().max(1) as f64;
        let width = self.means.len();
        let mut grad = vec![vec![0.0; width + 1]; w.len()];
        let mut loss = 0.0;
        for (i, row) in z.iter().enumerate() {
            let mut out: Vec<f64> = w.iter().map(|wk| dot(wk, row)).collect();
            let resid: Vec<f64> = match t {
                LinearTarget::Classes(y) => {
                    softmax(&mut out);
                    loss -= ln(out[y[i]].max(1e-300));
                    out.iter().enumerate().map(|(k, p)| p - (k == y[i]) as u8 as f64).collect()
                }
                LinearTarget::Values(y) => {
                    let r = out[0] - y[i];
                    loss += 0.5 * r * r;
                    vec![r]
                }
            };
            for (gk, rk) in grad.iter_mut().zip(&resid) {
                for j in 0..width {
                    gk[j] += rk * row[j] / n;
                }
                gk[width] += rk / n;
            }
        }
        loss /= n;
        for (gk, wk) in grad.iter_mut().zip(w) {
            for j in 0..width {
                gk[j] += self.l2 * wk[j];
                loss += 0.5 * self.l2 * wk[j] * wk[j];
            }
        }
        (loss, grad)
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let z = self.standardize(row);
        let mut out: Vec<f64> = self.weights.iter().map(|w| dot(w, &z)).collect();
        match self.kind {
            LinearKind::Softmax { .. } => {
                softmax(&mut out);
                out
            }
            LinearKind::LeastSquares { y_mean, y_scale } => vec![y_mean + y_scale * out[0]],
        }
    }
}

fn dot(w: &[f64], row: &[f64]) -> f64 {
    let bias = w[w.len() - 1];
    w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + bias
}
